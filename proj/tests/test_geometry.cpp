#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "avh/geometry.hpp"
#include "avh/rng.hpp"

using namespace avh;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

ClassifierWeights weights(std::initializer_list<std::initializer_list<double>> rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (double x : row) m(r, c++) = x;
        ++r;
    }
    return ClassifierWeights(m);
}

Eigen::VectorXd random_vector(Rng& rng, int dim) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.normal();
    return v;
}

ClassifierWeights random_weights(Rng& rng, int classes, int dim) {
    Eigen::MatrixXd m(classes, dim);
    for (int r = 0; r < classes; ++r)
        for (int c = 0; c < dim; ++c) m(r, c) = rng.normal();
    return ClassifierWeights(m);
}

}  // namespace

TEST(AngularDistance, ReferenceAngles) {
    const auto e1 = vec({1, 0});
    const auto e2 = vec({0, 1});
    EXPECT_DOUBLE_EQ(angular_distance(e1, e1), 0.0);
    EXPECT_DOUBLE_EQ(angular_distance(e1, e2), kPi / 2);
    EXPECT_DOUBLE_EQ(angular_distance(e1, -e1), kPi);
}

TEST(AngularDistance, ZeroNormNamesArgument) {
    try {
        angular_distance(vec({0, 0}), vec({1, 0}));
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("'u'"), std::string::npos);
    }
    try {
        angular_distance(vec({1, 0}), vec({0, 0}));
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("'v'"), std::string::npos);
    }
}

TEST(AngularDistance, SymmetricAndClampedUnderRounding) {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        const auto u = random_vector(rng, 2 + t % 7);
        const auto v = random_vector(rng, 2 + t % 7);
        EXPECT_EQ(angular_distance(u, v), angular_distance(v, u));
        const double self = angular_distance(u, 3.0 * u);
        EXPECT_FALSE(std::isnan(self));
        EXPECT_NEAR(self, 0.0, 1e-7);
    }
}

TEST(Avh, HandExamples) {
    const auto w = weights({{1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}, {-1, 0}});
    EXPECT_NEAR(avh_score(vec({1, 0}), w, 0), 0.2, 1e-15);
    EXPECT_DOUBLE_EQ(avh_score(vec({1, 0}), weights({{1, 0}, {0, 1}}), 0), 0.0);
}

TEST(Avh, EquidistantIsUniform) {
    // x on the diagonal of the identity basis is equidistant from every axis.
    for (int c = 2; c <= 6; ++c) {
        const ClassifierWeights w(Eigen::MatrixXd::Identity(c, c));
        const Eigen::VectorXd x = Eigen::VectorXd::Ones(c);
        for (int y = 0; y < c; ++y) EXPECT_NEAR(avh_score(x, w, y), 1.0 / c, 1e-14);
        const Eigen::VectorXd a = avc(x, w);
        for (int k = 0; k < c; ++k) EXPECT_NEAR(a[k], 1.0 / c, 1e-14);
    }
}

TEST(Avh, ClassIndexOutOfRange) {
    const auto w = weights({{1, 0}, {0, 1}});
    EXPECT_THROW(avh_score(vec({1, 1}), w, 2), IndexError);
    EXPECT_THROW(avh_score(vec({1, 1}), w, -1), IndexError);
    EXPECT_THROW(model_confidence(vec({1, 2}), 5), IndexError);
}

TEST(Avh, CollinearWithTargetOnly) {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const auto w = random_weights(rng, 2 + t % 5, 3 + t % 4);
        const int y = t % static_cast<int>(w.classes());
        EXPECT_NEAR(avh_score(2.5 * w.row(y), w, y), 0.0, 1e-7);
    }
}

TEST(Avc, HandExamples) {
    const Eigen::VectorXd a = avc(vec({1, 0}), weights({{1, 0}, {0, 1}}));
    EXPECT_NEAR(a[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(a[1], 1.0 / 3.0, 1e-15);
    const Eigen::VectorXd b = avc(vec({1, 0}), weights({{1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}, {-1, 0}}));
    EXPECT_NEAR(b[0], 1.0, 1e-15);
    EXPECT_NEAR(b[1], 0.0, 1e-15);
}

TEST(Avc, AntipodalToEveryClassIsDomainError) {
    EXPECT_THROW(avc(vec({-1, 0}), weights({{1, 0}, {2, 0}})), DomainError);
}

TEST(Avc, SumsToOneProperty) {
    Rng rng(99);
    for (int t = 0; t < 1000; ++t) {
        const int dim = 2 + static_cast<int>(rng.below(15));
        const int classes = 2 + static_cast<int>(rng.below(15));
        const auto w = random_weights(rng, classes, dim);
        const Eigen::VectorXd a = avc(random_vector(rng, dim), w);
        EXPECT_NEAR(a.sum(), 1.0, 1e-9);
        EXPECT_GE(a.minCoeff(), 0.0);
    }
}

TEST(ModelConfidence, Examples) {
    EXPECT_NEAR(model_confidence(Eigen::VectorXd::Constant(12, 0.7), 3), 1.0 / 12.0, 1e-15);
    EXPECT_NEAR(model_confidence(vec({0, -1e9}), 0), 1.0, 1e-12);
    // Direct scalar evaluation: 1 / (1 + e^-1).
    EXPECT_NEAR(model_confidence(vec({1, 0}), 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(model_confidence(vec({1, 0}), 0), 0.7311, 1e-4);
    EXPECT_NEAR(model_confidence(vec({1000, 0}), 0), 1.0, 1e-15);
}

TEST(EmbeddingNorm, Examples) {
    EXPECT_DOUBLE_EQ(embedding_norm(vec({3, 4})), 5.0);
    EXPECT_DOUBLE_EQ(embedding_norm(vec({0, 0})), 0.0);
    EXPECT_DOUBLE_EQ(embedding_norm(vec({1, 1, 1, 1})), 2.0);
}

TEST(Geometry, ScaleInvarianceProperty) {
    Rng rng(2024);
    for (int t = 0; t < 500; ++t) {
        const int dim = 2 + static_cast<int>(rng.below(15));
        const int classes = 2 + static_cast<int>(rng.below(15));
        const auto w = random_weights(rng, classes, dim);
        const auto x = random_vector(rng, dim);
        const int y = static_cast<int>(rng.below(classes));
        const double base = avh_score(x, w, y);
        const Eigen::VectorXd base_avc = avc(x, w);
        for (double alpha : {0.01, 0.5, 7.0, 100.0}) {
            EXPECT_NEAR(avh_score(alpha * x, w, y), base, 1e-12);
            EXPECT_LE((avc(alpha * x, w) - base_avc).cwiseAbs().maxCoeff(), 1e-12);
        }
        EXPECT_GE(base, 0.0);
        EXPECT_LE(base, 1.0);
    }
}

TEST(Geometry, HardnessReportBundlesScores) {
    const auto w = weights({{1, 0}, {0, 1}});
    const auto x = vec({3, 4});
    const HardnessReport r = hardness_report(x, w, 1);
    EXPECT_DOUBLE_EQ(r.avh, avh_score(x, w, 1));
    EXPECT_DOUBLE_EQ(r.norm, 5.0);
    EXPECT_DOUBLE_EQ(r.model_confidence, model_confidence(vec({3, 4}), 1));
    EXPECT_NEAR(r.avc.sum(), 1.0, 1e-12);
}

TEST(ClassifierWeights, Validation) {
    EXPECT_THROW(ClassifierWeights(Eigen::MatrixXd::Ones(1, 3)), ArgumentError);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(3, 3);
    m.row(1).setZero();
    EXPECT_THROW(ClassifierWeights{m}, DomainError);
}

class NormSweep : public ::testing::Test {
protected:
    // Unit-norm orthogonal classifiers; x sits theta1 from w1 and pi/2 - theta1 from w2.
    static std::vector<SweepPoint> sweep(double theta1, const std::vector<double>& alphas) {
        const auto w = weights({{1, 0}, {0, 1}});
        return norm_sweep(vec({std::cos(theta1), std::sin(theta1)}), w, 0, alphas);
    }
};

TEST_F(NormSweep, AvhConstantAtAppendixConfiguration) {
    std::vector<double> alphas;
    for (int i = 0; i <= 30; ++i) alphas.push_back(0.1 * std::pow(1000.0, i / 30.0));
    const auto pts = sweep(kPi / 4 - 0.05, alphas);
    const double expected = (kPi / 4 - 0.05) / (kPi / 2);
    EXPECT_NEAR(expected, 0.4682, 1e-4);
    for (const auto& p : pts) EXPECT_NEAR(p.avh, expected, 1e-12);
    for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_GT(pts[i].confidence, pts[i - 1].confidence);
}

TEST_F(NormSweep, LargeAlphaSaturatesConfidence) {
    const auto pts = sweep(kPi / 4 - 0.05, {1.0, 1e3, 1e5});
    EXPECT_NEAR(pts.back().confidence, 1.0, 1e-12);
    EXPECT_NEAR(pts[0].avh, pts[2].avh, 1e-12);
}

TEST_F(NormSweep, FlippedCaseDecreases) {
    const auto pts = sweep(kPi / 4 + 0.05, {0.1, 1.0, 10.0, 100.0});
    for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LT(pts[i].confidence, pts[i - 1].confidence);
}

TEST_F(NormSweep, RejectsNonPositiveAlpha) {
    EXPECT_THROW(sweep(0.3, {1.0, 0.0}), ArgumentError);
    EXPECT_THROW(sweep(0.3, {-2.0}), ArgumentError);
}

TEST(ConfidenceMonotonicity, BinaryEqualNormsProperty) {
    Rng rng(7);
    for (int t = 0; t < 200; ++t) {
        const double theta1 = rng.uniform(0.01, kPi / 2 - 0.01);
        const double alpha = rng.uniform(0.1, 20.0);
        const auto w = weights({{1, 0}, {0, 1}});
        const auto x = vec({std::cos(theta1), std::sin(theta1)});
        const double lo = model_confidence(logits(alpha * x, w), 0);
        const double hi = model_confidence(logits(1.5 * alpha * x, w), 0);
        if (theta1 < kPi / 4) {
            EXPECT_GT(hi, lo);
        } else {
            EXPECT_LT(hi, lo);
        }
    }
}
