// Command-line driver: build-library, train, eval, ablate, sweep, quality.
//
// Exit codes: 0 success, 2 invalid configuration or usage, 1 runtime failure.
// Output is plain text; no colour codes are ever emitted.

#include <chrono>
#include <functional>
#include <iostream>

#include <CLI11.hpp>

#include "kupbi/experiment.hpp"

namespace {

using namespace kupbi;
namespace fs = std::filesystem;

struct CliState {
    std::string config_path;
    std::vector<std::string> sets;  // key=value overrides, applied in order
};

void add_common_options(CLI::App* sub, CliState& st) {
    sub->add_option("-c,--config", st.config_path, "Config file of flat key = value lines");
    sub->add_option("-s,--set", st.sets, "Override a config key, e.g. --set k=5 (repeatable)")
        ->type_name("KEY=VALUE");
}

std::map<std::string, std::string> overrides_from(const std::vector<std::string>& sets) {
    std::map<std::string, std::string> out;
    for (const std::string& kv : sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        out[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return out;
}

ExperimentConfig load_config(const CliState& st) {
    std::map<std::string, std::string> file_kv;
    if (!st.config_path.empty()) file_kv = ExperimentConfig::parse_file(st.config_path);
    return ExperimentConfig::resolve(file_kv, overrides_from(st.sets));
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> out;
    for (const std::string& tok : detail::split_line(csv, ',')) {
        double v;
        if (!detail::parse_double(tok, v)) throw std::invalid_argument("--grid expects numbers, got '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

void print_rows(const std::vector<MetricsRow>& rows) {
    std::cout << std::left << std::setw(22) << "variant" << std::right << std::setw(12) << "mse" << std::setw(10)
              << "+/-" << std::setw(12) << "mae" << std::setw(10) << "+/-" << std::setw(10) << "mse%" << std::setw(10)
              << "mae%" << "\n";
    std::cout << std::string(86, '-') << "\n";
    for (const MetricsRow& r : rows) {
        std::cout << std::left << std::setw(22) << r.name << std::right << std::fixed << std::setprecision(4)
                  << std::setw(12) << r.mse_mean << std::setw(10) << r.mse_std << std::setw(12) << r.mae_mean
                  << std::setw(10) << r.mae_std;
        if (std::isfinite(r.mse_improvement_pct))
            std::cout << std::setprecision(2) << std::setw(10) << r.mse_improvement_pct << std::setw(10)
                      << r.mae_improvement_pct;
        else
            std::cout << std::setw(10) << "-" << std::setw(10) << "-";
        std::cout << "\n" << std::defaultfloat << std::setprecision(6);
    }
}

nlohmann::json data_json(const PreparedData& prep) {
    nlohmann::json j;
    j["channels"] = prep.C();
    j["train_rows"] = prep.splits.train.rows;
    j["val_rows"] = prep.splits.val.rows;
    j["test_rows"] = prep.splits.test.rows;
    j["train_chains"] = prep.train_chains.size();
    j["train_windows"] = prep.train_windows.size();
    j["val_windows"] = prep.val_windows.size();
    j["test_windows"] = prep.test_windows.size();
    return j;
}

nlohmann::json library_json(const RetrievalLibrary& lib) {
    nlohmann::json j;
    j["fingerprint"] = fingerprint_hex(lib.fingerprint);
    j["entries"] = lib.size();
    j["seq_len"] = lib.L;
    j["channels"] = lib.C;
    j["descriptor"] = to_string(lib.descriptor);
    j["epsilon"] = lib.epsilon;
    return j;
}

nlohmann::json base_report(const char* command, const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config_json(cfg);
    j["config_hash"] = cfg.hash_hex();
    return j;
}

/// Shared run loop: one (variant x seed) grid with per-run JSON rows.
std::vector<MetricsRow> run_matrix(PreparedData& prep, const PipelineConfig& pc, const std::vector<RunVariant>& rows,
                                   nlohmann::json& runs_out, LinearBackbone* keep_model = nullptr,
                                   const std::string& keep_name = "") {
    std::vector<MetricsRow> table;
    double base_mse = 0.0, base_mae = 0.0;
    bool have_base = false;
    for (const RunVariant& rv : rows) {
        std::vector<double> mses, maes;
        for (uint64_t seed : pc.seeds) {
            RunOutcome oc = run_single(prep, pc, rv, seed);
            mses.push_back(oc.test_mse);
            maes.push_back(oc.test_mae);
            nlohmann::json run;
            run["variant"] = rv.name;
            run["seed"] = seed;
            run["test_mse"] = oc.test_mse;
            run["test_mae"] = oc.test_mae;
            run["train_loss"] = oc.report.train_loss;
            run["val_mse"] = oc.report.val_mse;
            run["val_mae"] = oc.report.val_mae;
            run["best_epoch"] = oc.report.best_epoch;
            run["epochs_run"] = oc.report.epochs_run;
            runs_out.push_back(run);
            std::cout << "run " << rv.name << " seed=" << seed << ": test_mse=" << oc.test_mse
                      << " test_mae=" << oc.test_mae << " best_epoch=" << oc.report.best_epoch << "\n";
            if (keep_model && rv.name == keep_name && seed == pc.seeds.front()) *keep_model = std::move(oc.model);
        }
        MetricsRow row = make_row(rv.name, mses, maes);
        if (rv.kind == RunVariant::Kind::kBaseline && !have_base) {
            base_mse = row.mse_mean;
            base_mae = row.mae_mean;
            have_base = true;
        } else if (have_base) {
            row.mse_improvement_pct = improvement_percent(base_mse, row.mse_mean);
            row.mae_improvement_pct = improvement_percent(base_mae, row.mae_mean);
        }
        table.push_back(std::move(row));
    }
    return table;
}

int cmd_build_library(ExperimentConfig& cfg) {
    auto prep = prepare(cfg.pipeline());
    fs::create_directories(cfg.out_dir());
    sync_library_cache(*prep, cfg.out_dir(), std::cout);
    nlohmann::json report = base_report("build-library", cfg);
    report["library"] = library_json(prep->library);
    report["data"] = data_json(*prep);
    write_json(cfg.out_dir() / "report.json", report);
    std::cout << "report written to " << (cfg.out_dir() / "report.json").string() << "\n";
    return 0;
}

int cmd_train(ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineConfig& pc = cfg.pipeline();
    auto prep = prepare(pc);
    fs::create_directories(cfg.out_dir() / "tables");
    sync_library_cache(*prep, cfg.out_dir(), std::cout);

    std::vector<RunVariant> rows;
    rows.push_back(RunVariant::baseline());
    const RunVariant rv = variant_by_name(cfg.variant_name());
    if (cfg.augmented() && rv.kind != RunVariant::Kind::kBaseline) rows.push_back(rv);

    nlohmann::json runs = nlohmann::json::array();
    LinearBackbone kept;
    const std::string keep_name = rows.back().name;
    const std::vector<MetricsRow> table = run_matrix(*prep, pc, rows, runs, &kept, keep_name);

    kept.save((cfg.out_dir() / "model.ckpt").string());
    std::cout << "model (" << keep_name << ", seed " << pc.seeds.front() << ") written to "
              << (cfg.out_dir() / "model.ckpt").string() << "\n\n";
    print_rows(table);

    nlohmann::json report = base_report("train", cfg);
    report["library"] = library_json(prep->library);
    report["data"] = data_json(*prep);
    report["runs"] = runs;
    report["metrics"] = nlohmann::json::array();
    for (const MetricsRow& r : table) report["metrics"].push_back(row_json(r));
    report["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(cfg.out_dir() / "report.json", report);
    write_metrics_csv(cfg.out_dir() / "tables" / "metrics.csv", table);
    std::cout << "\nreport written to " << (cfg.out_dir() / "report.json").string() << "\n";
    return 0;
}

int cmd_eval(ExperimentConfig& cfg, std::string model_path) {
    const PipelineConfig& pc = cfg.pipeline();
    if (model_path.empty()) model_path = (cfg.out_dir() / "model.ckpt").string();
    LinearBackbone model = LinearBackbone::load(model_path);
    auto prep = prepare(pc);

    const RunVariant rv = variant_by_name(cfg.variant_name());
    const bool concat_model = model.input_len() == 2 * pc.L;
    if (!concat_model && model.input_len() != pc.L)
        throw std::runtime_error("eval: checkpoint input length " + std::to_string(model.input_len()) +
                                 " matches neither seq_len nor 2*seq_len");
    if (model.channels() != prep->C())
        throw std::runtime_error("eval: checkpoint channel count does not match the data");

    double mse = 0.0, mae = 0.0;
    if (model.fusion_enabled() || concat_model) {
        std::optional<LinearBackbone> pbcc;
        if (rv.construct_variant == Variant::kPbcc) {
            TrainConfig ptc = pc.train_cfg;
            ptc.seed = pc.seeds.front();
            pbcc = train_pbcc_predictor(prep->train_chains, prep->val_chains, ptc, pc.kernel);
        }
        const AuxStreams aux = build_aux_streams(*prep, pc, rv, prep->test_windows, nullptr, false, pc.seeds.front(),
                                                 pbcc ? &*pbcc : nullptr);
        if (concat_model) {
            const std::vector<QueryWindow> te = concat_windows(prep->test_windows, aux);
            std::tie(mse, mae) = evaluate(model, te);
        } else {
            std::tie(mse, mae) = evaluate(model, prep->test_windows, &aux);
        }
    } else {
        std::tie(mse, mae) = evaluate(model, prep->test_windows);
    }
    std::cout << "eval " << model_path << " on " << prep->test_windows.size() << " test windows\n";
    std::cout << std::fixed << std::setprecision(6) << "test_mse=" << mse << " test_mae=" << mae << "\n";
    return 0;
}

int cmd_ablate(ExperimentConfig& cfg, const std::string& variants_csv) {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineConfig& pc = cfg.pipeline();
    std::vector<RunVariant> rows;
    rows.push_back(RunVariant::baseline());
    for (const std::string& tok : detail::split_line(variants_csv, ',')) {
        if (tok.empty()) continue;
        RunVariant rv = variant_by_name(tok);
        if (rv.kind != RunVariant::Kind::kBaseline) rows.push_back(rv);
    }
    if (rows.size() < 2) throw std::invalid_argument("ablate: no variants named");

    auto prep = prepare(pc);
    fs::create_directories(cfg.out_dir() / "tables");
    sync_library_cache(*prep, cfg.out_dir(), std::cout);

    nlohmann::json runs = nlohmann::json::array();
    const std::vector<MetricsRow> table = run_matrix(*prep, pc, rows, runs);
    std::cout << "\n";
    print_rows(table);

    nlohmann::json report = base_report("ablate", cfg);
    report["library"] = library_json(prep->library);
    report["data"] = data_json(*prep);
    report["runs"] = runs;
    report["metrics"] = nlohmann::json::array();
    for (const MetricsRow& r : table) report["metrics"].push_back(row_json(r));
    report["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(cfg.out_dir() / "report.json", report);
    write_metrics_csv(cfg.out_dir() / "tables" / "ablation.csv", table);
    std::cout << "\nreport written to " << (cfg.out_dir() / "report.json").string() << "\n";
    return 0;
}

int cmd_sweep(ExperimentConfig& cfg, const std::string& param, std::string grid_csv) {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineConfig& pc = cfg.pipeline();
    if (grid_csv.empty()) {
        if (param == "alpha")
            grid_csv = "0.15,0.25,0.35,0.45,0.55,0.65,0.75,0.85,0.9,0.95,1.0";
        else if (param == "tau")
            grid_csv = "0.01,0.05,0.1,0.15,1.0,5.0,10.0";
        else if (param == "k")
            grid_csv = "1,3,5,7,9";
        else
            throw std::invalid_argument("sweep: unknown parameter '" + param + "' (alpha, tau, k)");
    }
    const std::vector<double> grid = parse_grid(grid_csv);

    auto prep = prepare(pc);
    fs::create_directories(cfg.out_dir() / "tables");
    sync_library_cache(*prep, cfg.out_dir(), std::cout);

    const std::vector<MetricsRow> table = run_sweep(*prep, pc, param, grid);
    std::cout << "\n";
    print_rows(table);

    nlohmann::json report = base_report("sweep", cfg);
    report["library"] = library_json(prep->library);
    report["data"] = data_json(*prep);
    report["param"] = param;
    report["grid"] = grid;
    report["metrics"] = nlohmann::json::array();
    for (const MetricsRow& r : table) report["metrics"].push_back(row_json(r));
    report["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(cfg.out_dir() / "report.json", report);
    write_metrics_csv(cfg.out_dir() / "tables" / ("sweep_" + param + ".csv"), table);
    write_plotdata_csv(cfg.out_dir() / "tables" / ("plot_" + param + ".csv"), table);
    std::cout << "\nreport written to " << (cfg.out_dir() / "report.json").string() << "\n";
    return 0;
}

int cmd_quality(ExperimentConfig& cfg) {
    const PipelineConfig& pc = cfg.pipeline();
    auto prep = prepare(pc);
    const RetrievalQuality q = pipeline_quality(*prep, pc);
    std::cout << "retrieval quality over " << q.queries << " test windows (variant " << cfg.variant_name() << ")\n"
              << std::fixed << std::setprecision(6) << "aux_mse=" << q.mse << " aux_mae=" << q.mae
              << " aux_corr=" << q.corr << "\n";
    fs::create_directories(cfg.out_dir());
    nlohmann::json report = base_report("quality", cfg);
    report["library"] = library_json(prep->library);
    report["quality"] = {{"mse", q.mse}, {"mae", q.mae}, {"corr", q.corr}, {"queries", q.queries}};
    write_json(cfg.out_dir() / "quality.json", report);
    std::cout << "report written to " << (cfg.out_dir() / "quality.json").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "kupbi: retrieval-augmented linear forecasting.\n"
        "Variants: baseline, kupbi, residual, direct_continuation, target,\n"
        "random_retrieval, pbcc, concat, wo_alpha, wo_tau, wo_topk."};
    app.require_subcommand(1);

    CliState st;
    std::string model_path, variants_csv =
        "kupbi,wo_alpha,wo_tau,wo_topk,residual,direct_continuation,target,random_retrieval,pbcc,concat";
    std::string sweep_param, sweep_grid;

    CLI::App* sub;
    std::function<int(ExperimentConfig&)> body;

    sub = app.add_subcommand("build-library", "Build the retrieval library and cache it on disk");
    add_common_options(sub, st);
    sub->callback([&] { body = cmd_build_library; });

    sub = app.add_subcommand("train", "Train baseline (and the configured variant) and report test metrics");
    add_common_options(sub, st);
    sub->callback([&] { body = cmd_train; });

    sub = app.add_subcommand("eval", "Evaluate a saved checkpoint on the test split");
    add_common_options(sub, st);
    sub->add_option("-m,--model", model_path, "Checkpoint path (default <out>/model.ckpt)");
    sub->callback([&] { body = [&](ExperimentConfig& c) { return cmd_eval(c, model_path); }; });

    sub = app.add_subcommand("ablate", "Run the ablation matrix against the baseline");
    add_common_options(sub, st);
    sub->add_option("--variants", variants_csv, "Comma-separated variant rows");
    sub->callback([&] { body = [&](ExperimentConfig& c) { return cmd_ablate(c, variants_csv); }; });

    sub = app.add_subcommand("sweep", "Sweep one knob (alpha, tau, or k) over a grid");
    add_common_options(sub, st);
    sub->add_option("--param", sweep_param, "Knob to sweep: alpha, tau, or k")->required();
    sub->add_option("--grid", sweep_grid, "Comma-separated grid (defaults per knob)");
    sub->callback([&] { body = [&](ExperimentConfig& c) { return cmd_sweep(c, sweep_param, sweep_grid); }; });

    sub = app.add_subcommand("quality", "Retrieval-quality diagnostics of the auxiliary stream");
    add_common_options(sub, st);
    sub->callback([&] { body = cmd_quality; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    ExperimentConfig cfg;
    try {
        cfg = load_config(st);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        return body(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
