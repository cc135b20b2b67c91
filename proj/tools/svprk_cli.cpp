#include <svprk/experiment.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Constrained stochastic variational integrators: experiment runner"};
    app.set_version_flag("--version", std::string(svprk::kVersion));
    app.require_subcommand(1);

    std::string config_file;
    std::string output_dir;
    auto* run = app.add_subcommand("run", "run the study described by a JSON config");
    run->add_option("--config", config_file, "config file")->required();
    run->add_option("--output-dir", output_dir, "override the config's output_dir");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = svprk::load_config(config_file);
        const std::filesystem::path dir = output_dir.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(output_dir);
        const auto res = svprk::run_experiment(cfg, dir);
        std::cout << res.summary;
        for (const auto& f : res.files) std::cout << "wrote " << f.string() << '\n';
        return 0;
    } catch (const svprk::ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
