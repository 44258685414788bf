#pragma once

#include <filesystem>
#include <iomanip>

#include <nlohmann/json.hpp>

#include "kupbi/pipeline.hpp"

namespace kupbi {

/**
 * @brief Flat key=value configuration with defaults, file + override
 * resolution, strict unknown-key rejection, and a content hash that names
 * the output directory.
 */
class ExperimentConfig {
public:
    /// Every recognised key with its default value.
    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            {"data_path", ""},
            {"drop_first_column", "true"},
            {"seq_len", "336"},
            {"horizon", "96"},
            {"stride", "1"},
            {"split", "7:1:2"},
            {"split_mode", "ratio"},
            {"epsilon", "1e-4"},
            {"descriptor", "ratio"},
            {"k", "1"},
            {"exclude_self", "true"},
            {"exclusion_radius", "-1"},
            {"variant", "kupbi"},
            {"tau", "0.01"},
            {"clip", "true"},
            {"clip_quantile", "0.9"},
            {"epsilon_s", "1e-8"},
            {"align_epsilon", "1e-8"},
            {"augmented", "true"},
            {"gate", "static"},
            {"alpha", "0.75"},
            {"gate_per_stream", "false"},
            {"individual", "false"},
            {"kernel", "25"},
            {"optimizer", "adam"},
            {"lr", "0.005"},
            {"beta1", "0.9"},
            {"beta2", "0.999"},
            {"adam_eps", "1e-8"},
            {"batch_size", "32"},
            {"epochs", "10"},
            {"patience", "3"},
            {"seeds", "2021,2022,2023"},
            {"threads", "1"},
            {"corr", "pooled"},
            {"out_dir", "out"},
        };
        return d;
    }

    /**
     * @brief Parse a config file: one `key = value` per line, `#` comments,
     * blank lines allowed.  Values may be bare or double-quoted.  Unknown
     * keys and section headers are rejected.
     */
    static std::map<std::string, std::string> parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in.is_open()) throw std::invalid_argument("config: cannot open file: " + path);
        std::map<std::string, std::string> kv;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            if (trimmed[0] == '[')
                throw std::invalid_argument("config: sections are not supported (line " + std::to_string(lineno) +
                                            "); use flat key = value pairs");
            const size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: expected key = value at line " + std::to_string(lineno));
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
                value = value.substr(1, value.size() - 2);
            if (key.empty()) throw std::invalid_argument("config: empty key at line " + std::to_string(lineno));
            kv[key] = value;
        }
        return kv;
    }

    /// Merge defaults <- file <- overrides, rejecting unknown keys.
    static ExperimentConfig resolve(const std::map<std::string, std::string>& file_kv,
                                    const std::map<std::string, std::string>& overrides) {
        std::map<std::string, std::string> merged = defaults();
        for (const auto& src : {file_kv, overrides})
            for (const auto& [key, value] : src) {
                if (!merged.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
                merged[key] = value;
            }
        ExperimentConfig cfg;
        cfg.resolved_ = merged;
        cfg.build();
        return cfg;
    }

    const std::map<std::string, std::string>& resolved() const { return resolved_; }
    const PipelineConfig& pipeline() const { return pipe_; }
    PipelineConfig& pipeline() { return pipe_; }
    const std::string& variant_name() const { return variant_name_; }
    const std::string& out_base() const { return out_base_; }
    bool augmented() const { return augmented_; }

    /// Canonical text: sorted key=value lines covering every key.
    std::string canonical_text() const {
        std::string out;
        for (const auto& [key, value] : resolved_) {
            out += key;
            out += '=';
            out += value;
            out += '\n';
        }
        return out;
    }

    uint64_t hash() const { return fnv1a_str(canonical_text()); }

    std::string hash_hex() const {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << hash();
        return os.str();
    }

    std::filesystem::path out_dir() const { return std::filesystem::path(out_base_) / hash_hex(); }

private:
    static std::string trim(const std::string& s) {
        size_t b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }

    const std::string& get(const std::string& key) const { return resolved_.at(key); }

    static bool parse_bool(const std::string& v, const std::string& key) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw std::invalid_argument("config: key '" + key + "' expects true/false, got '" + v + "'");
    }

    static double parse_num(const std::string& v, const std::string& key) {
        double out;
        if (!detail::parse_double(v, out))
            throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
        return out;
    }

    static int parse_int(const std::string& v, const std::string& key) {
        const double d = parse_num(v, key);
        if (d != std::floor(d)) throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
        return static_cast<int>(d);
    }

    void build() {
        pipe_ = PipelineConfig{};
        pipe_.data_path = get("data_path");
        pipe_.drop_first_column = parse_bool(get("drop_first_column"), "drop_first_column");
        pipe_.L = parse_int(get("seq_len"), "seq_len");
        pipe_.T = parse_int(get("horizon"), "horizon");
        pipe_.stride = parse_int(get("stride"), "stride");

        pipe_.split_spec = parse_split(get("split"), get("split_mode"));

        pipe_.epsilon = parse_num(get("epsilon"), "epsilon");
        const std::string desc = get("descriptor");
        if (desc == "ratio")
            pipe_.descriptor = DescriptorKind::kRatio;
        else if (desc == "residual")
            pipe_.descriptor = DescriptorKind::kResidual;
        else
            throw std::invalid_argument("config: descriptor must be 'ratio' or 'residual', got '" + desc + "'");

        pipe_.k = parse_int(get("k"), "k");
        pipe_.exclude_self = parse_bool(get("exclude_self"), "exclude_self");
        pipe_.exclusion_radius = parse_int(get("exclusion_radius"), "exclusion_radius");

        variant_name_ = get("variant");
        const RunVariant rv = variant_by_name(variant_name_);  // validates the name
        pipe_.cont.variant = rv.construct_variant;
        pipe_.cont.tau = parse_num(get("tau"), "tau");
        pipe_.cont.apply_clip = parse_bool(get("clip"), "clip");
        pipe_.cont.clip_quantile = parse_num(get("clip_quantile"), "clip_quantile");
        pipe_.cont.epsilon_s = parse_num(get("epsilon_s"), "epsilon_s");
        pipe_.cont.align_epsilon = parse_num(get("align_epsilon"), "align_epsilon");

        // A residual run needs the matching descriptor; catch it at parse time.
        if (pipe_.cont.variant == Variant::kResidual && pipe_.descriptor != DescriptorKind::kResidual)
            throw std::invalid_argument("config: variant 'residual' requires descriptor = residual");
        if (pipe_.cont.variant == Variant::kRatio && pipe_.descriptor != DescriptorKind::kRatio)
            throw std::invalid_argument("config: variant 'kupbi' requires descriptor = ratio");

        augmented_ = parse_bool(get("augmented"), "augmented");
        pipe_.augmented = augmented_;
        const std::string gate = get("gate");
        if (gate == "static")
            pipe_.gate_mode = GateMode::kStatic;
        else if (gate == "dynamic")
            pipe_.gate_mode = GateMode::kDynamic;
        else
            throw std::invalid_argument("config: gate must be 'static' or 'dynamic', got '" + gate + "'");
        pipe_.alpha = parse_num(get("alpha"), "alpha");
        pipe_.gate_per_stream = parse_bool(get("gate_per_stream"), "gate_per_stream");
        pipe_.individual = parse_bool(get("individual"), "individual");
        pipe_.kernel = parse_int(get("kernel"), "kernel");

        const std::string opt = get("optimizer");
        if (opt == "adam")
            pipe_.train_cfg.optimizer = OptimizerKind::kAdam;
        else if (opt == "sgd")
            pipe_.train_cfg.optimizer = OptimizerKind::kSgd;
        else
            throw std::invalid_argument("config: optimizer must be 'adam' or 'sgd', got '" + opt + "'");
        pipe_.train_cfg.lr = parse_num(get("lr"), "lr");
        pipe_.train_cfg.beta1 = parse_num(get("beta1"), "beta1");
        pipe_.train_cfg.beta2 = parse_num(get("beta2"), "beta2");
        pipe_.train_cfg.adam_eps = parse_num(get("adam_eps"), "adam_eps");
        pipe_.train_cfg.batch_size = parse_int(get("batch_size"), "batch_size");
        pipe_.train_cfg.max_epochs = parse_int(get("epochs"), "epochs");
        pipe_.train_cfg.patience = parse_int(get("patience"), "patience");

        pipe_.seeds.clear();
        for (const std::string& tok : detail::split_line(get("seeds"), ',')) {
            const std::string t = trim(tok);
            if (t.empty()) continue;
            pipe_.seeds.push_back(static_cast<uint64_t>(parse_num(t, "seeds")));
        }
        if (pipe_.seeds.empty()) throw std::invalid_argument("config: seeds must name at least one seed");
        pipe_.train_cfg.seed = pipe_.seeds.front();

        pipe_.threads = parse_int(get("threads"), "threads");
        const std::string corr = get("corr");
        if (corr == "pooled")
            pipe_.per_query_corr = false;
        else if (corr == "per-query")
            pipe_.per_query_corr = true;
        else
            throw std::invalid_argument("config: corr must be 'pooled' or 'per-query', got '" + corr + "'");
        out_base_ = get("out_dir");

        pipe_.validate();
    }

    static SplitSpec parse_split(const std::string& ratios, const std::string& mode) {
        const std::vector<std::string> parts = detail::split_line(ratios, ':');
        if (parts.size() != 3) throw std::invalid_argument("config: split expects three ratio parts like 7:1:2");
        double a = parse_num(trim(parts[0]), "split");
        double b = parse_num(trim(parts[1]), "split");
        double c = parse_num(trim(parts[2]), "split");
        const double sum = a + b + c;
        if (!(sum > 0)) throw std::invalid_argument("config: split ratios must be positive");
        SplitSpec spec;
        spec.train_ratio = a / sum;
        spec.val_ratio = b / sum;
        spec.test_ratio = c / sum;
        if (mode == "ratio")
            spec.mode = SplitMode::kRatio;
        else if (mode == "ett-hour")
            spec.mode = SplitMode::kEttHour;
        else if (mode == "ett-minute")
            spec.mode = SplitMode::kEttMinute;
        else
            throw std::invalid_argument("config: split_mode must be ratio, ett-hour, or ett-minute; got '" + mode + "'");
        return spec;
    }

    std::map<std::string, std::string> resolved_;
    PipelineConfig pipe_;
    std::string variant_name_ = "kupbi";
    std::string out_base_ = "out";
    bool augmented_ = true;
};

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline nlohmann::json config_json(const ExperimentConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, value] : cfg.resolved()) j[key] = value;
    return j;
}

inline nlohmann::json row_json(const MetricsRow& r) {
    nlohmann::json j;
    j["name"] = r.name;
    j["seeds"] = r.seeds;
    j["mse_mean"] = r.mse_mean;
    j["mse_std"] = r.mse_std;
    j["mae_mean"] = r.mae_mean;
    j["mae_std"] = r.mae_std;
    if (std::isfinite(r.mse_improvement_pct)) {
        j["mse_improvement_pct"] = r.mse_improvement_pct;
        j["mae_improvement_pct"] = r.mae_improvement_pct;
    }
    return j;
}

/// Fixed row-JSON for a hex fingerprint.
inline std::string fingerprint_hex(uint64_t fp) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fp;
    return os.str();
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out.is_open()) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out.is_open()) throw std::runtime_error("cannot write " + path.string());
    out << "name,seeds,mse_mean,mse_std,mae_mean,mae_std,mse_improvement_pct,mae_improvement_pct\n";
    out << std::setprecision(10);
    for (const MetricsRow& r : rows) {
        out << r.name << ',' << r.seeds << ',' << r.mse_mean << ',' << r.mse_std << ',' << r.mae_mean << ','
            << r.mae_std << ',';
        if (std::isfinite(r.mse_improvement_pct))
            out << r.mse_improvement_pct << ',' << r.mae_improvement_pct;
        else
            out << ',';
        out << '\n';
    }
}

/// value/mse pairs for external plotting of a sweep.
inline void write_plotdata_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out.is_open()) throw std::runtime_error("cannot write " + path.string());
    out << "setting,mse_mean,mse_std,mae_mean,mae_std\n";
    out << std::setprecision(10);
    for (const MetricsRow& r : rows)
        out << r.name << ',' << r.mse_mean << ',' << r.mse_std << ',' << r.mae_mean << ',' << r.mae_std << '\n';
}

/**
 * @brief Library on disk for this config: load when the cached file matches
 * the freshly built fingerprint, otherwise (re)write it.
 */
inline void sync_library_cache(PreparedData& prep, const std::filesystem::path& dir, std::ostream& log) {
    const std::filesystem::path path = dir / "library.bin";
    if (std::filesystem::exists(path)) {
        try {
            const RetrievalLibrary cached = load_library(path.string());
            if (cached.fingerprint == prep.library.fingerprint) {
                log << "reusing cached library (fingerprint match " << fingerprint_hex(cached.fingerprint) << ")\n";
                return;
            }
            log << "cached library fingerprint mismatch; rebuilding " << path.string() << "\n";
        } catch (const std::exception& e) {
            log << "cached library unreadable (" << e.what() << "); rebuilding\n";
        }
    }
    save_library(prep.library, path.string());
    log << "library written to " << path.string() << " (fingerprint " << fingerprint_hex(prep.library.fingerprint)
        << ", " << prep.library.size() << " entries)\n";
}

}  // namespace kupbi
