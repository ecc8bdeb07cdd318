#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "avh/dynamics.hpp"
#include "avh/rng.hpp"
#include "avh/synthdata.hpp"

using namespace avh;

namespace {

// Features independent of labels: every class looks the same to any model.
LabeledDataset symmetric_noise(int n, int dim, int classes, std::uint64_t seed) {
    Rng rng(seed);
    LabeledDataset d;
    d.num_classes = classes;
    d.features.resize(n, dim);
    d.labels.resize(static_cast<std::size_t>(n));
    d.hsf = std::vector<double>(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < dim; ++j) d.features(i, j) = rng.normal();
        d.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
        (*d.hsf)[static_cast<std::size_t>(i)] = rng.uniform();
    }
    return d;
}

const std::vector<double> kFiveBins{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

double closed_form_slope(const std::vector<double>& y, std::size_t first, std::size_t count) {
    double sx = 0, sy = 0, sxy = 0, sxx = 0;
    for (std::size_t i = first; i < first + count; ++i) {
        const double x = static_cast<double>(i + 1);
        sx += x, sy += y[i], sxy += x * y[i], sxx += x * x;
    }
    const double n = static_cast<double>(count);
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST(RecordEpoch, UntrainedModelIsAtChance) {
    const LabeledDataset d = symmetric_noise(4000, 6, 4, 1);
    const Model m = init_model({{6, 32, 8, 4}, 2});
    const auto rows = record_epoch(m, d, BinBy::hsf, kFiveBins, 1);
    ASSERT_EQ(rows.size(), 5u);
    for (const EpochRecord& r : rows) {
        ASSERT_GT(r.count, 100u);
        EXPECT_NEAR(*r.accuracy, 0.25, 0.06) << "bin " << r.bin;
        EXPECT_GE(*r.std_norm, 0.0);
        EXPECT_GE(*r.std_avh, 0.0);
    }
}

TEST(RecordEpoch, SingleBinMatchesGlobalAndGeometry) {
    const LabeledDataset d = symmetric_noise(300, 5, 3, 3);
    const Model m = init_model({{5, 7, 3}, 4});
    const auto rows = record_epoch(m, d, BinBy::hsf, std::vector<double>{0.0, 1.0}, 1);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].count, 300u);

    const ForwardResult fr = forward(m, d.features);
    const ClassifierWeights w = m.classifier_weights();
    double avh_sum = 0.0, norm_sum = 0.0, hits = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const int y = d.labels[static_cast<std::size_t>(i)];
        const bool dead = fr.embeddings.row(i).squaredNorm() == 0.0;
        avh_sum += dead ? 1.0 / 3.0 : avh_score(fr.embeddings.row(i).transpose(), w, y);
        norm_sum += fr.embeddings.row(i).norm();
        Eigen::Index best;
        fr.logits.row(i).maxCoeff(&best);
        hits += best == y;
    }
    EXPECT_NEAR(*rows[0].mean_avh, avh_sum / 300.0, 1e-12);
    EXPECT_NEAR(*rows[0].mean_norm, norm_sum / 300.0, 1e-12);
    EXPECT_NEAR(*rows[0].accuracy, hits / 300.0, 1e-15);
}

TEST(RecordEpoch, MissingBinningVariable) {
    LabeledDataset d = symmetric_noise(20, 3, 2, 5);
    const Model m = init_model({{3, 2}, 1});
    d.hsf.reset();
    EXPECT_THROW(record_epoch(m, d, BinBy::hsf, kFiveBins, 1), ArgumentError);
    EXPECT_THROW(record_epoch(m, d, BinBy::oracle_hardness, kFiveBins, 1), ArgumentError);
    const std::vector<double> short_values(5, 0.5);
    EXPECT_THROW(record_epoch(m, d, short_values, kFiveBins, 1), ShapeError);
}

TEST(RecordEpoch, OracleHardnessBinning) {
    MixtureParams p;
    p.n = 500;
    const LabeledDataset d = gen_mixture(p, 9);
    const Model m = init_model({{8, 4}, 1});
    const auto rows = record_epoch(m, d, BinBy::oracle_hardness, std::vector<double>{0.0, 0.5, 1.0}, 1);
    EXPECT_EQ(rows[0].count + rows[1].count, 500u);
}

TEST(DynamicsTable, RecordsTrainingHook) {
    MixtureParams p;
    p.n = 400;
    LabeledDataset train_set = gen_mixture(p, 1);
    LabeledDataset eval_set = gen_mixture(p, 2);
    eval_set.hsf = simulate_hsf(*eval_set.oracle_posterior, eval_set.labels, 10, 3);
    DynamicsTable table;
    TrainConfig cfg;
    cfg.epochs = 4;
    train(init_model({{8, 16, 4}, 1}), train_set, cfg, [&](const EpochInfo& info, const Model& m) {
        table.append(record_epoch(m, eval_set, BinBy::hsf, kFiveBins, info.epoch));
    });
    EXPECT_EQ(table.epochs(), 4);
    EXPECT_EQ(table.records().size(), 20u);
    EXPECT_EQ(table.at(3, 2).epoch, 3);

    std::ostringstream out;
    write_dynamics_csv(out, table);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,bin,count,mean_norm,std_norm,mean_avh,std_avh,accuracy,mean_conf");
    int data_rows = 0;
    while (std::getline(in, line)) ++data_rows;
    EXPECT_EQ(data_rows, 20);

    const auto overall = overall_series(table, &EpochRecord::mean_avh);
    ASSERT_EQ(overall.size(), 4u);
    const auto all_rows = record_epoch(train(init_model({{8, 16, 4}, 1}), train_set, cfg), eval_set, BinBy::hsf,
                                       std::vector<double>{0.0, 1.0}, 1);
    EXPECT_NEAR(overall[3], *all_rows[0].mean_avh, 1e-12);

    EXPECT_THROW(table.append(record_epoch(init_model({{8, 4}, 1}), eval_set, BinBy::hsf, kFiveBins, 6)), ArgumentError);
}

TEST(Plateau, ConstantAndLinear) {
    const std::vector<double> flat(30, 0.7);
    const PlateauMetrics c = plateau_metrics(flat, 0.2);
    EXPECT_EQ(c.early_slope, 0.0);
    EXPECT_EQ(c.late_slope, 0.0);
    EXPECT_TRUE(c.early_flat);

    std::vector<double> line(30);
    for (std::size_t i = 0; i < line.size(); ++i) line[i] = 2.0 - 0.03 * static_cast<double>(i);
    const PlateauMetrics l = plateau_metrics(line, 0.2);
    EXPECT_FALSE(l.early_flat);
    EXPECT_NEAR(l.ratio, 1.0, 1e-9);
    EXPECT_NEAR(l.early_slope, -0.03, 1e-12);
}

TEST(Plateau, ReciprocalSeries) {
    std::vector<double> y(50);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / static_cast<double>(i + 1);
    const PlateauMetrics p = plateau_metrics(y, 0.2);
    EXPECT_NEAR(p.early_slope, closed_form_slope(y, 0, 10), 1e-12);
    EXPECT_NEAR(p.late_slope, closed_form_slope(y, 40, 10), 1e-12);
    EXPECT_LT(p.ratio, 0.1);
}

TEST(Plateau, Errors) {
    EXPECT_THROW(plateau_metrics(std::vector<double>{1, 2, 3}, 0.2), ArgumentError);
    EXPECT_THROW(plateau_metrics(std::vector<double>(10, 1.0), 0.0), ArgumentError);
    EXPECT_THROW(plateau_metrics(std::vector<double>(10, 1.0), 0.7), ArgumentError);
}

TEST(PhaseSplit, Examples) {
    std::vector<double> norm_flat(20, 3.0), avh_down(20), norm_double(20), avh_const(20, 0.3);
    for (std::size_t i = 0; i < 20; ++i) {
        avh_down[i] = 0.5 - 0.01 * static_cast<double>(i);
        norm_double[i] = std::pow(2.0, static_cast<double>(i));
    }
    EXPECT_FALSE(phase_split(norm_flat, avh_down).has_value());
    EXPECT_EQ(phase_split(norm_double, avh_const), 1);

    // AVH falls until epoch 12 then stays; norm stays until epoch 12 then grows.
    const int change = 12;
    std::vector<double> norm(40), avh(40);
    for (int e = 1; e <= 40; ++e) {
        const auto i = static_cast<std::size_t>(e - 1);
        avh[i] = e <= change ? 0.6 - 0.02 * e : 0.6 - 0.02 * change;
        norm[i] = e <= change ? 1.0 : 1.0 + 0.1 * (e - change);
    }
    const auto split = phase_split(norm, avh);
    ASSERT_TRUE(split.has_value());
    EXPECT_LE(std::abs(*split - change), 1);

    EXPECT_THROW(phase_split(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), ArgumentError);
    EXPECT_THROW(phase_split(std::vector<double>(5, 1.0), std::vector<double>(6, 1.0)), ShapeError);
}
