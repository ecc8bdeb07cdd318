#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "avh/experiments.hpp"

namespace ex = avh::experiments;

namespace {

enum ExitCode { ok = 0, unexpected = 1, config_error = 2, data_error = 3, numerical_error = 4 };

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

struct Resolved {
    std::uint64_t seed = 0;
    std::string out;
};

Resolved resolve_common(avh::ConfigNode& root, const CommonFlags& flags, const std::string& command) {
    if (const auto name = root.maybe<std::string>("experiment"); name && *name != command)
        throw avh::ConfigError("config is for experiment '" + *name + "', not '" + command + "'");
    Resolved r;
    const auto config_seed = root.maybe<std::uint64_t>("seed");
    if (flags.seed)
        r.seed = *flags.seed;
    else if (config_seed)
        r.seed = *config_seed;
    else
        throw avh::ConfigError("seed: required (pass --seed or set \"seed\" in the config)");
    const std::string config_out = root.get<std::string>("out", "out/" + command);
    r.out = !flags.out.empty() ? flags.out : config_out;
    if (r.out.empty()) throw avh::ConfigError("out: must not be empty");
    std::error_code ec;
    if (std::filesystem::exists(r.out, ec) && !std::filesystem::is_directory(r.out, ec))
        throw avh::ConfigError("out: '" + r.out + "' exists and is not a directory");
    return r;
}

ex::Artifacts run_command(const std::string& command, const CommonFlags& flags, Resolved& resolved) {
    const nlohmann::json doc = flags.config.empty() ? nlohmann::json::object() : avh::read_config_file(flags.config);
    avh::ConfigNode root(doc, "");
    resolved = resolve_common(root, flags, command);
    const std::uint64_t seed = resolved.seed;

    // Parse and validate everything, then run; nothing touches disk until the end.
    if (command == "gaussian-demo") {
        const auto c = ex::parse_gaussian_demo(root);
        root.finish();
        return ex::run_gaussian_demo(c, seed).artifacts;
    }
    if (command == "dynamics") {
        const auto c = ex::parse_dynamics(root);
        root.finish();
        return ex::run_dynamics(c, seed).artifacts;
    }
    if (command == "correlate") {
        const auto c = ex::parse_correlate(root);
        root.finish();
        return ex::run_correlate(c, seed).artifacts;
    }
    if (command == "selftrain") {
        const auto c = ex::parse_selftrain(root);
        root.finish();
        return ex::run_selftrain(c, seed).artifacts;
    }
    if (command == "norm-invariance") {
        const auto c = ex::parse_norm_invariance(root);
        root.finish();
        return ex::run_norm_invariance(c).artifacts;
    }
    if (command == "gen-data") {
        const auto c = ex::parse_gen_data(root);
        root.finish();
        return ex::run_gen_data(c, seed).artifacts;
    }
    throw avh::ConfigError("unknown command " + command);
}

int report(const char* kind, const std::exception& e, int code) {
    std::cerr << "avh_cli: " << kind << ": " << e.what() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Angular Visual Hardness experiments on synthetic data"};
    app.require_subcommand(1);

    CommonFlags flags;
    const std::pair<const char*, const char*> commands[] = {
        {"gaussian-demo", "two-Gaussian toy: per-sample AVH / norm vs oracle hardness"},
        {"dynamics", "per-epoch norm / AVH / accuracy / confidence by hardness bin"},
        {"correlate", "AVH, confidence and norm correlations with HSF, and Fisher z comparisons"},
        {"selftrain", "class-balanced self-training under domain shift, softmax vs AVH selection"},
        {"norm-invariance", "confidence and AVH while scaling one embedding"},
        {"gen-data", "write a synthetic dataset (and optionally a trained model)"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", flags.config, "JSON run config");
        sub->add_option("--seed", flags.seed, "run seed (overrides the config)");
        sub->add_option("--out", flags.out, "output directory (overrides the config)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : config_error;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    Resolved resolved;
    try {
        const ex::Artifacts artifacts = run_command(command, flags, resolved);
        ex::write_artifacts(resolved.out, artifacts);
        for (const auto& a : artifacts) std::cout << "wrote " << (std::filesystem::path(resolved.out) / a.name).string() << '\n';
        return ok;
    } catch (const avh::ConfigError& e) {
        return report("config error", e, config_error);
    } catch (const avh::NumericalError& e) {
        return report("numerical error", e, numerical_error);
    } catch (const avh::DomainError& e) {
        return report("numerical error", e, numerical_error);
    } catch (const avh::DataError& e) {
        return report("data error", e, data_error);
    } catch (const avh::ParseError& e) {
        return report("data error", e, data_error);
    } catch (const std::invalid_argument& e) {
        // ArgumentError / ShapeError raised while processing data
        return report("data error", e, data_error);
    } catch (const std::out_of_range& e) {
        return report("data error", e, data_error);
    } catch (const std::filesystem::filesystem_error& e) {
        return report("data error", e, data_error);
    } catch (const std::exception& e) {
        return report("error", e, unexpected);
    }
}
