#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <rgflow/cli.hpp>

namespace cli = rgflow::cli;

int main(int argc, char** argv) {
    CLI::App app{"Scale-flow solver for the regularized fractional Phi^4 equation on the torus"};
    std::string sub, config, manifest, output, cache_dir;
    std::vector<std::string> sets;
    unsigned workers = 0;
    app.add_option("subcommand", sub, "validate | flow | counterterms | verify-scaling | solve | compare | "
                                      "kappa-study | cumulants");
    app.add_option("--config", config, "flat key = value config file");
    app.add_option("--set", sets, "override one key, e.g. --set sigma=0.4");
    app.add_option("--manifest", manifest, "re-run the study recorded in a manifest");
    app.add_option("--workers", workers, "worker threads");
    app.add_option("--output", output, "output directory");
    app.add_option("--cache-dir", cache_dir, "kernel cache directory");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : cli::validation;
    }
    try {
        rgflow::RunConfig cfg;
        if (!manifest.empty()) {
            auto m = rgflow::read_json(manifest);
            cfg = rgflow::RunConfig::from_json(m.at("config"));
            if (sub.empty()) sub = m.at("subcommand").get<std::string>();
        }
        if (!config.empty()) cfg.load_file(config);
        for (const auto& kv : sets) cfg.apply_override(kv);
        if (workers) cfg.workers = workers;
        if (!output.empty()) cfg.output = output;
        if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
        if (sub.empty()) throw rgflow::ConfigError("missing subcommand");
        auto summary = cli::run(sub, cfg);
        std::cout << summary.dump(2) << '\n';
        return cli::ok;
    } catch (...) {
        return cli::exit_status(std::current_exception());
    }
}
