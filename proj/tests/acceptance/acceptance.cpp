// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avh/config.hpp"
#include "avh/experiments.hpp"
#include "grad_check.hpp"
#include "oracles.hpp"

using namespace avh;
namespace ex = avh::experiments;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void run_criterion(int id, const char* title, const std::function<void(Outcome&)>& body) {
    Outcome o;
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " |" << o.detail.str()
              << std::endl;
}

nlohmann::json load_config(const std::string& name) { return read_config_file(std::string(AVH_CONFIG_DIR) + "/" + name); }

std::uint64_t config_seed(const nlohmann::json& j) { return j.at("seed").get<std::uint64_t>(); }

// Strips the keys the CLI consumes so the experiment parser sees only its own sections.
nlohmann::json experiment_sections(nlohmann::json j) {
    j.erase("experiment");
    j.erase("seed");
    j.erase("out");
    return j;
}

template <typename Parse>
auto parse_file(const std::string& name, Parse parse) {
    const nlohmann::json doc = experiment_sections(load_config(name));
    ConfigNode root(doc, "");
    auto c = parse(root);
    root.finish();
    return c;
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
    return m;
}

int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---------------------------------------------------------------------------

void fisher_fidelity(Outcome& o) {
    const auto sp = stats::compare_correlations(0.360, 0.325, 29987, 29987);
    const auto pe = stats::compare_correlations(0.385, 0.341, 29987, 29987);
    const auto ke = stats::compare_correlations(0.257, 0.231, 29987, 29987);
    o.detail << " spearman z=" << sp.z1 << "/" << sp.z2 << " Z=" << sp.z_value << " p=" << sp.p_value
             << "; pearson Z=" << pe.z_value << "; kendall Z=" << ke.z_value << " p=" << ke.p_value;
    o.require(std::abs(sp.z1 - 0.377) <= 0.001 && std::abs(sp.z2 - 0.337) <= 0.001, "spearman z-scores");
    o.require(std::abs(sp.z_value - 4.85) <= 0.05 && sp.p_value < 1e-5, "spearman Z and p");
    o.require(std::abs(pe.z_value - 6.2) <= 0.1, "pearson Z");
    o.require(std::abs(ke.z_value - 3.38) <= 0.05 && std::abs(ke.p_value - 0.0003) <= 0.0002, "kendall Z and p");
}

void scale_invariance(Outcome& o) {
    Rng rng(101);
    double worst = 0.0;
    int correct = 0, moved = 0;
    for (int t = 0; t < 1000; ++t) {
        const int d = uniform_int(rng, 2, 16), c = uniform_int(rng, 2, 16);
        // Unit-norm embedding and class weights, so alpha = 1 is the unit scale.
        const Eigen::VectorXd x = random_matrix(rng, d, 1).normalized();
        Eigen::MatrixXd wm = random_matrix(rng, c, d);
        wm.rowwise().normalize();
        const ClassifierWeights w(wm);
        const int y = uniform_int(rng, 0, c - 1);
        const double base = avh_score(x, w, y);
        for (double alpha : {0.01, 1.0, 100.0}) worst = std::max(worst, std::abs(avh_score(alpha * x, w, y) - base));
        const Eigen::VectorXd z = logits(x, w);
        Eigen::Index best;
        z.maxCoeff(&best);
        if (best != y) continue;
        ++correct;
        const double shift = std::abs(model_confidence(logits(100.0 * x, w), y) - model_confidence(z, y));
        if (shift > 0.01) ++moved;
    }
    const double frac = correct ? static_cast<double>(moved) / correct : 0.0;
    o.detail << " max |avh(ax) - avh(x)| = " << worst << "; confidence moved in " << moved << "/" << correct
             << " correct cases (" << frac << ")";
    o.require(worst <= 1e-12, "avh invariance within 1e-12");
    o.require(correct > 0 && frac >= 0.95, "confidence sensitivity >= 95%");
}

void gradient_checks(Outcome& o) {
    Rng rng(202);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const int in = uniform_int(rng, 2, 5), width = uniform_int(rng, 3, 6), classes = uniform_int(rng, 2, 4);
        const int rows = uniform_int(rng, 2, 6);
        Model m = init_model(ModelSpec{{in, width, classes}, 1000 + static_cast<std::uint64_t>(t)});
        // Positive biases keep the ReLUs away from their kink.
        for (auto& l : m.hidden) l.bias.setConstant(0.5);
        const Eigen::MatrixXd x = random_matrix(rng, rows, in, 0.3);
        std::vector<int> y(static_cast<std::size_t>(rows));
        for (int& v : y) v = uniform_int(rng, 0, classes - 1);
        for (LossKind kind : {LossKind::softmax_ce, LossKind::avh_loss}) {
            const BatchGradient bg = loss_and_gradient(m, x, y, kind, 4.0);
            auto loss_with = [&](auto mutate) {
                return [&, mutate](const Eigen::MatrixXd& p) {
                    Model copy = m;
                    mutate(copy, p);
                    return loss_and_gradient(copy, x, y, kind, 4.0).loss;
                };
            };
            const Eigen::MatrixXd fd_w = testing_support::central_difference(
                m.hidden[0].weight, loss_with([](Model& c, const Eigen::MatrixXd& p) { c.hidden[0].weight = p; }));
            const Eigen::MatrixXd fd_b = testing_support::central_difference(
                Eigen::MatrixXd(m.hidden[0].bias),
                loss_with([](Model& c, const Eigen::MatrixXd& p) { c.hidden[0].bias = p; }));
            const Eigen::MatrixXd fd_c = testing_support::central_difference(
                m.classifier, loss_with([](Model& c, const Eigen::MatrixXd& p) { c.classifier = p; }));
            worst = std::max({worst, testing_support::relative_error(bg.grads.weights[0], fd_w),
                              testing_support::relative_error(Eigen::MatrixXd(bg.grads.biases[0]), fd_b),
                              testing_support::relative_error(bg.grads.classifier, fd_c)});
        }
    }
    o.detail << " worst relative error over 50 batches x 2 losses = " << worst;
    o.require(worst < 1e-4, "relative error < 1e-4");
}

void gaussian_demo(Outcome& o) {
    const nlohmann::json doc = load_config("gaussian_demo.json");
    const auto c = parse_file("gaussian_demo.json", ex::parse_gaussian_demo);
    const auto r = ex::run_gaussian_demo(c, config_seed(doc));
    const double a = std::abs(r.avh_vs_hardness.coef), n = std::abs(r.norm_vs_hardness.coef);
    o.detail << " seed " << config_seed(doc) << ": |rho(avh)| = " << a << ", |rho(norm)| = " << n;
    o.require(a > n + 0.1, "|rho(avh)| > |rho(norm)| + 0.1");
    o.require(r.mean_avh_hard && r.mean_avh_easy, "both hardness groups populated");
    if (r.mean_avh_hard && r.mean_avh_easy) {
        o.detail << "; mean avh hard " << *r.mean_avh_hard << " (n=" << r.hard_count << ") vs easy " << *r.mean_avh_easy
                 << " (n=" << r.easy_count << ")";
        o.require(*r.mean_avh_hard > *r.mean_avh_easy, "hard mean avh > easy mean avh");
    }
}

void dynamics(Outcome& o) {
    const nlohmann::json doc = load_config("dynamics.json");
    const std::uint64_t seed = config_seed(doc);
    const auto c = parse_file("dynamics.json", [](ConfigNode& n) { return ex::parse_dynamics(n); });
    const auto wide = ex::run_dynamics(c, seed);
    const DynamicsTable& t = wide.table;
    o.require(t.bins() == 5 && t.epochs() == 30, "5 bins x 30 epochs");

    bool grew = true;
    for (std::size_t b = 0; b < t.bins(); ++b) {
        const EpochRecord &first = t.at(1, b), &last = t.at(t.epochs(), b);
        if (first.count == 0) continue;
        if (!(*last.mean_norm > *first.mean_norm)) grew = false;
    }
    o.require(grew, "obs1 final norm > first-epoch norm in every bin");

    o.detail << " obs2 plateau ratio " << wide.avh_plateau.ratio;
    o.require(!wide.avh_plateau.early_flat && wide.avh_plateau.ratio < 0.25, "obs2 plateau ratio < 0.25");

    // Bins run from low to high HSF, so AVH should fall across them.
    int monotone = 0, considered = 0;
    for (int e = 4; e <= t.epochs(); ++e) {
        ++considered;
        bool ok = true;
        std::optional<double> prev;
        for (std::size_t b = 0; b < t.bins(); ++b) {
            const EpochRecord& r = t.at(e, b);
            if (r.count == 0) continue;
            if (prev && *r.mean_avh > *prev) ok = false;
            prev = r.mean_avh;
        }
        monotone += ok;
    }
    const double frac = static_cast<double>(monotone) / considered;
    o.detail << "; obs3 monotone in " << monotone << "/" << considered << " epochs";
    o.require(frac >= 0.9, "obs3 monotone ordering in >= 90% of epochs after 3");

    ex::DynamicsConfig narrow_cfg = c;
    narrow_cfg.hidden = {4};
    const auto narrow = ex::run_dynamics(narrow_cfg, seed);
    o.detail << "; obs4 width " << c.hidden.front() << ": acc " << wide.final_accuracy << " avh "
             << wide.overall_avh.back() << ", width 4: acc " << narrow.final_accuracy << " avh "
             << narrow.overall_avh.back();
    o.require(wide.final_accuracy > narrow.final_accuracy, "obs4 wider model more accurate");
    o.require(wide.overall_avh.back() < narrow.overall_avh.back(), "obs4 wider model lower final AVH");
}

void selftrain(Outcome& o) {
    Rng rng(303);
    Eigen::MatrixXd probs(10000, 5);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::VectorXd z = random_matrix(rng, 5, 1, 2.0);
        probs.row(i) = softmax(z).transpose();
    }
    const auto lam = compute_lambda(probs, 0.3);
    const bool equivalent = pseudo_label_avh(probs, probs, lam, lam) == pseudo_label_softmax(probs, lam);
    o.require(equivalent, "solver equivalence on 10^4 rows");

    const nlohmann::json doc = load_config("selftrain.json");
    const auto c = parse_file("selftrain.json", ex::parse_selftrain);
    const auto r = ex::run_selftrain(c, config_seed(doc));
    const SelfTrainResult* soft = nullptr;
    const SelfTrainResult* avh = nullptr;
    for (const auto& [mode, res] : r.runs) (mode == SelfTrainMode::softmax ? soft : avh) = &res;
    o.require(soft && avh, "both modes ran");
    if (!soft || !avh) return;
    const RoundStats &s1 = soft->rounds.front(), &a1 = avh->rounds.front();
    o.require(s1.portion == a1.portion, "equal portion");
    const double cs = s1.all.mean_confidence.value_or(NAN), ca = a1.all.mean_confidence.value_or(NAN);
    const double fs = soft->rounds.back().target_accuracy, fa = avh->rounds.back().target_accuracy;
    o.detail << " round-1 selected mean confidence avh " << ca << " vs softmax " << cs << "; final target accuracy avh "
             << fa << " vs softmax " << fs;
    o.require(ca <= cs, "avh selection mean confidence <= softmax");
    o.require(fa >= fs - 0.005, "avh final accuracy >= softmax - 0.5%");
}

void stats_oracles(Outcome& o) {
    Rng rng(404);
    auto tied = [&](std::size_t n, int levels) {
        std::vector<double> v(n);
        for (auto& x : v) x = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels)));
        return v;
    };
    auto varies = [](const std::vector<double>& v) {
        return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) != v.end();
    };
    int spearman_cases = 0, spearman_bad = 0;
    while (spearman_cases < 500) {
        const std::size_t n = 5 + rng.below(80);
        const auto a = tied(n, 2 + spearman_cases % 7), b = tied(n, 2 + spearman_cases % 5);
        if (!varies(a) || !varies(b)) continue;
        ++spearman_cases;
        if (stats::spearman(a, b) != stats::pearson(stats::rank_average(a), stats::rank_average(b))) ++spearman_bad;
    }
    int kendall_cases = 0;
    double kendall_worst = 0.0;
    while (kendall_cases < 200) {
        const std::size_t n = 2 + rng.below(199);
        const auto a = tied(n, 2 + kendall_cases % 20), b = tied(n, 2 + kendall_cases % 13);
        if (!varies(a) || !varies(b)) continue;
        ++kendall_cases;
        kendall_worst =
            std::max(kendall_worst, std::abs(stats::kendall_tau(a, b) - testing_support::kendall_merge_oracle(a, b)));
    }
    const double sf = stats::normal_sf(1.96);
    o.detail << " spearman mismatches " << spearman_bad << "/500; kendall max deviation " << kendall_worst
             << " over 200 inputs (n <= 200); normal_sf(1.96) = " << sf;
    o.require(spearman_bad == 0, "spearman equals pearson of ranks exactly");
    o.require(kendall_worst <= 1e-12, "kendall matches merge-count oracle");
    o.require(std::abs(sf - 0.0250) <= 1e-4, "normal_sf(1.96)");
}

void independence(Outcome& o) {
    MixtureParams p;
    p.classes = 10;
    p.dim = 16;
    p.n = 5000;
    const LabeledDataset d = gen_mixture(p, 505);
    ex::ScoreColumns s;
    s.hsf = simulate_hsf(*d.oracle_posterior, d.labels, 10, 506);
    // Norms of embeddings drawn from a separate stream, unrelated to the data.
    Rng rng(507);
    std::vector<double> norm(static_cast<std::size_t>(p.n));
    for (double& v : norm) v = random_matrix(rng, 16, 1).norm();
    s.scores["norm"] = stats::minmax_scale_grouped(norm, d.labels);
    const auto r = ex::correlate_columns(s, {stats::Method::spearman, stats::Method::pearson, stats::Method::kendall});
    for (const auto& [name, rep] : r.correlations) {
        o.detail << " " << stats::to_string(rep.method) << " r=" << rep.coef << " p=" << rep.p_nonzero << ";";
        o.require(rep.p_nonzero > 0.05, stats::to_string(rep.method) + " p > 0.05");
    }
    o.require(r.correlations.size() == 3 && r.n == 5000, "three methods on n = 5000");
}

void norm_sweep_demo(Outcome& o) {
    ex::NormInvarianceConfig near;  // theta1 < theta2: x is closer to its own class weight
    ex::NormInvarianceConfig far = near;
    std::swap(far.theta1, far.theta2);
    for (const auto& [cfg, sign] : {std::pair{near, 1.0}, std::pair{far, -1.0}}) {
        const auto sweep = ex::run_norm_invariance(cfg).sweep;
        double lo = sweep.front().avh, hi = lo;
        bool monotone = true;
        for (std::size_t i = 1; i < sweep.size(); ++i) {
            lo = std::min(lo, sweep[i].avh), hi = std::max(hi, sweep[i].avh);
            if (!(sign * (sweep[i].confidence - sweep[i - 1].confidence) > 0.0)) monotone = false;
        }
        o.detail << " theta2-theta1=" << cfg.theta2 - cfg.theta1 << ": avh spread " << hi - lo << ", confidence "
                 << sweep.front().confidence << " -> " << sweep.back().confidence << ";";
        o.require(sweep.front().alpha == 0.1 && sweep.back().alpha == 100.0, "alpha range [0.1, 100]");
        o.require(hi - lo <= 1e-12, "avh constant");
        o.require(monotone, sign > 0 ? "confidence strictly increasing" : "confidence strictly decreasing");
    }
}

void cli_determinism(Outcome& o) {
    const fs::path work = fs::path(AVH_ACCEPTANCE_WORKDIR);
    fs::remove_all(work);
    fs::create_directories(work);
    const fs::path configs = fs::path(AVH_CONFIG_DIR);
    // gen-data runs first; the dataset-mode correlate config reads its output.
    const std::vector<std::pair<std::string, std::string>> runs{
        {"gen-data", "gen_data.json"},           {"correlate", "correlate_dataset.json"},
        {"gaussian-demo", "gaussian_demo.json"}, {"dynamics", "dynamics.json"},
        {"correlate", "correlate.json"},         {"correlate", "reference_comparison.json"},
        {"selftrain", "selftrain.json"},         {"norm-invariance", "norm_invariance.json"},
    };
    int compared = 0;
    for (const auto& [command, config] : runs) {
        const std::string stem = fs::path(config).stem().string();
        for (const char* rep : {"a", "b"}) {
            // The dataset-mode config names its inputs relative to the working
            // directory, so gen-data writes to out/gen-data there.
            const std::string out = command == "gen-data" ? std::string("out/gen-data") + (rep[0] == 'a' ? "" : "_b")
                                                          : std::string("out/") + stem + "_" + rep;
            const std::string cmd = "cd \"" + work.string() + "\" && \"" + AVH_CLI_PATH + "\" " + command + " --config \"" +
                                    (configs / config).string() + "\" --out " + out + " > /dev/null";
            const int rc = std::system(cmd.c_str());
            o.require(rc == 0, command + " with " + config + " exits 0");
        }
        const fs::path a = work / (command == "gen-data" ? "out/gen-data" : "out/" + stem + "_a");
        const fs::path b = work / (command == "gen-data" ? "out/gen-data_b" : "out/" + stem + "_b");
        if (!fs::is_directory(a) || !fs::is_directory(b)) continue;
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        o.require(!names.empty(), config + " produced files");
        for (const auto& name : names) {
            ++compared;
            o.require(fs::exists(b / name) && read_bytes(a / name) == read_bytes(b / name),
                      config + ": " + name + " identical");
        }
    }
    o.detail << " compared " << compared << " output files across " << runs.size() << " runs";
}

}  // namespace

int main() {
    run_criterion(1, "Fisher z comparison of reference coefficients", fisher_fidelity);
    run_criterion(2, "AVH scale invariance vs confidence sensitivity", scale_invariance);
    run_criterion(3, "analytic gradients match finite differences", gradient_checks);
    run_criterion(4, "two-Gaussian demo ranks AVH above norm", gaussian_demo);
    run_criterion(5, "training dynamics observations", dynamics);
    run_criterion(6, "self-training selection and accuracy", selftrain);
    run_criterion(7, "statistics oracles", stats_oracles);
    run_criterion(8, "independence fixture fails to reject the null", independence);
    run_criterion(9, "norm sweep", norm_sweep_demo);
    run_criterion(10, "CLI outputs are byte-identical on re-run", cli_determinism);
    std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
