#include "flowlab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "flowlab/rng.hpp"
#include "flowlab/textio.hpp"

namespace fs = std::filesystem;

namespace flowlab {

namespace {

constexpr const char* kToolVersion = "flowlab 0.1.0";
constexpr uint64_t kStreamSources = 0x736f7572636573ull;
constexpr uint64_t kStreamRun = 0x72756eull;

std::string iso_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

uint64_t run_seed(uint64_t seed, int source_index) {
    return derive_seed(derive_seed(seed, kStreamRun), static_cast<uint64_t>(source_index));
}

/// Collects artifact text in memory, then flushes everything atomically with
/// one manifest. finish() may run from an error path with partial contents.
class RunDir {
public:
    explicit RunDir(std::string dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    void add(const std::string& name, const std::string& contents) {
        files_.emplace_back(name, contents);
    }

    void finish(const std::string& status) {
        RunManifest m;
        m.tool_version = kToolVersion;
        m.created = iso_timestamp();
        m.status = status;
        for (const auto& [name, contents] : files_) {
            atomic_write_file(dir_ + "/" + name, contents);
            m.artifacts.emplace_back(name, hash_hex(fnv1a64(contents.data(), contents.size())));
        }
        write_manifest(m, dir_ + "/manifest.txt");
    }

private:
    std::string dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

GmmConditionalModel resolve_model(const ExperimentConfig& cfg) {
    if (cfg.model_path.empty()) return make_family_model(DatasetSpec{});
    return load_model(cfg.model_path);
}

EditReport run_one(const VelocityField& field, const Vec& x_src, const ExperimentConfig& cfg,
                   const TimeGrid& grid, uint64_t seed) {
    const Condition c_src = Condition::class_id(cfg.c_src);
    const Condition c_tar = Condition::class_id(cfg.c_tar);
    if (cfg.method == Method::flowedit) {
        return flowedit_run(field, x_src, c_src, c_tar, cfg.guidance, grid, seed);
    }
    return cvc_run(field, x_src, c_src, c_tar, cfg.cvc, grid, seed);
}

std::string metrics_text(const std::vector<MetricRow>& rows) {
    std::ostringstream ss;
    write_metrics_csv(rows, ss);
    return ss.str();
}

std::string config_text(const ExperimentConfig& cfg) {
    std::ostringstream ss;
    write_config(cfg, ss);
    return ss.str();
}

double mean_of(const std::vector<MetricRow>& rows, double MetricRow::* field) {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.*field;
    return s / static_cast<double>(rows.size());
}

std::string summary_common(const ExperimentConfig& cfg, const std::vector<MetricRow>& rows) {
    std::ostringstream ss;
    ss << "kind = " << to_string(cfg.kind) << "\n";
    ss << "backend = " << to_string(cfg.backend) << "\n";
    ss << "method = " << to_string(cfg.method) << "\n";
    ss << "steps = " << cfg.n_steps << "\n";
    ss << "n_max_fraction = " << g17(cfg.n_max_fraction) << "\n";
    ss << "c_src = " << cfg.c_src << "\n";
    ss << "c_tar = " << cfg.c_tar << "\n";
    ss << "sources = " << cfg.n_sources << "\n";
    ss << "seeds =";
    for (uint64_t s : cfg.seeds) ss << " " << s;
    ss << "\n";
    ss << "omega1 = " << g17(cfg.guidance.omega1) << "\n";
    ss << "omega2 = " << g17(cfg.guidance.omega2) << "\n";
    ss << "alpha = " << g17(cfg.cvc.alpha) << "\n";
    ss << "beta = " << g17(cfg.cvc.beta) << "\n";
    ss << "eta = " << g17(cfg.cvc.eta) << "\n";
    ss << "correction = " << to_string(cfg.cvc.correction_mode) << "\n";
    ss << "runs = " << rows.size() << "\n";
    ss << "mean_final_mse = " << g17(mean_of(rows, &MetricRow::final_mse)) << "\n";
    ss << "mean_semantic_score = " << g17(mean_of(rows, &MetricRow::semantic_score)) << "\n";
    ss << "mean_x2_norm = " << g17(mean_of(rows, &MetricRow::x2_norm)) << "\n";
    return ss.str();
}

MetricRow make_row(const std::string& run_id, uint64_t seed, const std::string& method,
                   const EditReport& report, const GmmConditionalModel& model, int c_tar,
                   double wall_ms) {
    MetricRow row;
    row.run_id = run_id;
    row.seed = seed;
    row.method = method;
    row.final_mse = report.final_mse_to_src;
    row.semantic_score = model.class_posterior(report.final)[static_cast<size_t>(c_tar)];
    row.x2_norm = norm(report.x2_delta);
    row.wall_ms = wall_ms;
    return row;
}

class StopWatch {
public:
    StopWatch() : start_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

std::string to_string(Backend b) { return b == Backend::oracle ? "oracle" : "learned"; }
std::string to_string(Method m) { return m == Method::flowedit ? "flowedit" : "cvc"; }

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::reconstruct: return "reconstruct";
        case ExperimentKind::edit: return "edit";
        case ExperimentKind::sweep: return "sweep";
        case ExperimentKind::ablate: return "ablate";
    }
    return "reconstruct";
}

std::string to_string(CorrectionMode m) {
    switch (m) {
        case CorrectionMode::off: return "off";
        case CorrectionMode::literal: return "literal";
        case CorrectionMode::tweedie_residual: return "tweedie_residual";
    }
    return "off";
}

Backend backend_from_string(const std::string& s) {
    if (s == "oracle") return Backend::oracle;
    if (s == "learned") return Backend::learned;
    throw ConfigError("unknown backend '" + s + "' (oracle, learned)");
}

Method method_from_string(const std::string& s) {
    if (s == "flowedit") return Method::flowedit;
    if (s == "cvc") return Method::cvc;
    throw ConfigError("unknown method '" + s + "' (flowedit, cvc)");
}

ExperimentKind kind_from_string(const std::string& s) {
    if (s == "reconstruct") return ExperimentKind::reconstruct;
    if (s == "edit") return ExperimentKind::edit;
    if (s == "sweep") return ExperimentKind::sweep;
    if (s == "ablate") return ExperimentKind::ablate;
    throw ConfigError("unknown experiment kind '" + s + "' (reconstruct, edit, sweep, ablate)");
}

CorrectionMode correction_mode_from_string(const std::string& s) {
    if (s == "off") return CorrectionMode::off;
    if (s == "literal") return CorrectionMode::literal;
    if (s == "tweedie_residual") return CorrectionMode::tweedie_residual;
    throw ConfigError("unknown correction mode '" + s + "' (off, literal, tweedie_residual)");
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

namespace {

bool bool_from_string(const std::string& s) {
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw ConfigError("expected a boolean (on/off), got '" + s + "'");
}

double double_value(const std::string& s) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw ConfigError("trailing text after number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("expected a number, got '" + s + "'");
    }
}

int int_value(const std::string& s) {
    try {
        size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw ConfigError("trailing text after integer '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("expected an integer, got '" + s + "'");
    }
}

uint64_t u64_value(const std::string& s) {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw ConfigError("trailing text after integer '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("expected an unsigned integer, got '" + s + "'");
    }
}

template <typename T, typename Parse>
std::vector<T> list_value(const std::string& s, Parse parse) {
    std::vector<T> out;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) out.push_back(parse(tok));
    if (out.empty()) throw ConfigError("expected a non-empty list");
    return out;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string line, section;
    int line_no = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw ConfigError("config line " + std::to_string(line_no) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = trim(line);
        if (body.empty() || body[0] == '#') continue;
        if (body.front() == '[') {
            if (body.back() != ']') fail("unterminated section header");
            section = body.substr(1, body.size() - 2);
            if (section != "experiment" && section != "guidance" && section != "cvc" &&
                section != "sweep" && section != "train") {
                fail("unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) fail("expected 'key = value'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) fail("empty key");

        try {
            if (section == "experiment") {
                if (key == "kind") cfg.kind = kind_from_string(value);
                else if (key == "backend") cfg.backend = backend_from_string(value);
                else if (key == "method") cfg.method = method_from_string(value);
                else if (key == "model") cfg.model_path = value;
                else if (key == "checkpoint") cfg.checkpoint_path = value;
                else if (key == "steps") cfg.n_steps = int_value(value);
                else if (key == "n_max_fraction") cfg.n_max_fraction = double_value(value);
                else if (key == "c_src") cfg.c_src = int_value(value);
                else if (key == "c_tar") cfg.c_tar = int_value(value);
                else if (key == "sources") cfg.n_sources = int_value(value);
                else if (key == "seeds") cfg.seeds = list_value<uint64_t>(value, u64_value);
                else fail("unknown key '" + key + "' in [experiment]");
            } else if (section == "guidance") {
                if (key == "omega1") cfg.guidance.omega1 = double_value(value);
                else if (key == "omega2") cfg.guidance.omega2 = double_value(value);
                else fail("unknown key '" + key + "' in [guidance]");
            } else if (section == "cvc") {
                if (key == "alpha") cfg.cvc.alpha = double_value(value);
                else if (key == "beta") cfg.cvc.beta = double_value(value);
                else if (key == "eta") cfg.cvc.eta = double_value(value);
                else if (key == "correction") cfg.cvc.correction_mode = correction_mode_from_string(value);
                else if (key == "second_eta_in_update") cfg.cvc.second_eta_in_update = bool_from_string(value);
                else if (key == "t_floor") cfg.cvc.t_floor = double_value(value);
                else fail("unknown key '" + key + "' in [cvc]");
            } else if (section == "sweep") {
                if (key == "omega2_list") cfg.sweep_omega2 = list_value<double>(value, double_value);
                else fail("unknown key '" + key + "' in [sweep]");
            } else if (section == "train") {
                if (key == "learning_rate") cfg.train.learning_rate = double_value(value);
                else if (key == "batch_size") cfg.train.batch_size = int_value(value);
                else if (key == "epochs") cfg.train.epochs = int_value(value);
                else if (key == "steps_per_epoch") cfg.train.steps_per_epoch = int_value(value);
                else if (key == "p_drop") cfg.train.p_drop = double_value(value);
                else if (key == "seed") cfg.train.seed = u64_value(value);
                else if (key == "hidden") cfg.hidden_widths = list_value<int>(value, int_value);
                else fail("unknown key '" + key + "' in [train]");
            } else {
                fail("key outside any section");
            }
        } catch (const ConfigError& e) {
            if (std::string(e.what()).rfind("config line", 0) == 0) throw;
            fail(e.what());
        }
    }

    if (cfg.seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    if (cfg.n_steps < 1) throw ConfigError("config: steps must be >= 1");
    if (!(cfg.n_max_fraction > 0.0 && cfg.n_max_fraction <= 1.0)) {
        throw ConfigError("config: n_max_fraction must be in (0, 1]");
    }
    if (cfg.n_sources < 1) throw ConfigError("config: sources must be >= 1");
    if (cfg.c_src < 0 || cfg.c_tar < 0) throw ConfigError("config: class ids must be >= 0");
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return parse_config(in);
}

void write_config(const ExperimentConfig& cfg, std::ostream& out) {
    out << "[experiment]\n";
    out << "kind = " << to_string(cfg.kind) << "\n";
    out << "backend = " << to_string(cfg.backend) << "\n";
    out << "method = " << to_string(cfg.method) << "\n";
    if (!cfg.model_path.empty()) out << "model = " << cfg.model_path << "\n";
    if (!cfg.checkpoint_path.empty()) out << "checkpoint = " << cfg.checkpoint_path << "\n";
    out << "steps = " << cfg.n_steps << "\n";
    out << "n_max_fraction = " << g17(cfg.n_max_fraction) << "\n";
    out << "c_src = " << cfg.c_src << "\n";
    out << "c_tar = " << cfg.c_tar << "\n";
    out << "sources = " << cfg.n_sources << "\n";
    out << "seeds =";
    for (uint64_t s : cfg.seeds) out << " " << s;
    out << "\n";
    out << "\n[guidance]\n";
    out << "omega1 = " << g17(cfg.guidance.omega1) << "\n";
    out << "omega2 = " << g17(cfg.guidance.omega2) << "\n";
    out << "\n[cvc]\n";
    out << "alpha = " << g17(cfg.cvc.alpha) << "\n";
    out << "beta = " << g17(cfg.cvc.beta) << "\n";
    out << "eta = " << g17(cfg.cvc.eta) << "\n";
    out << "correction = " << to_string(cfg.cvc.correction_mode) << "\n";
    out << "second_eta_in_update = " << (cfg.cvc.second_eta_in_update ? "on" : "off") << "\n";
    out << "t_floor = " << g17(cfg.cvc.t_floor) << "\n";
    out << "\n[sweep]\n";
    out << "omega2_list =";
    for (double w : cfg.sweep_omega2) out << " " << g17(w);
    out << "\n";
    out << "\n[train]\n";
    out << "learning_rate = " << g17(cfg.train.learning_rate) << "\n";
    out << "batch_size = " << cfg.train.batch_size << "\n";
    out << "epochs = " << cfg.train.epochs << "\n";
    out << "steps_per_epoch = " << cfg.train.steps_per_epoch << "\n";
    out << "p_drop = " << g17(cfg.train.p_drop) << "\n";
    out << "seed = " << cfg.train.seed << "\n";
    out << "hidden =";
    for (int h : cfg.hidden_widths) out << " " << h;
    out << "\n";
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ostringstream ss;
    write_config(cfg, ss);
    atomic_write_file(path, ss.str());
}

// ---------------------------------------------------------------------------
// Dataset families
// ---------------------------------------------------------------------------

GmmConditionalModel make_family_model(const DatasetSpec& spec) {
    if (spec.family == "symmetric-2gmm") {
        if (spec.d < 1) throw RejectedInput("symmetric-2gmm: d must be >= 1");
        if (!(spec.sep > 0.0) || !(spec.sigma > 0.0)) {
            throw RejectedInput("symmetric-2gmm: sep and sigma must be > 0");
        }
        Vec mu_pos(static_cast<size_t>(spec.d), 0.0);
        Vec mu_neg(static_cast<size_t>(spec.d), 0.0);
        mu_pos[0] = spec.sep / 2.0;
        mu_neg[0] = -spec.sep / 2.0;
        std::vector<std::vector<GaussianComponent>> comps = {
            {{mu_pos, spec.sigma, 1.0}},
            {{mu_neg, spec.sigma, 1.0}},
        };
        return GmmConditionalModel(std::move(comps), {0.5, 0.5});
    }
    if (spec.family == "ring-kgmm") {
        if (spec.d < 2) throw RejectedInput("ring-kgmm: d must be >= 2");
        if (spec.k < 2) throw RejectedInput("ring-kgmm: k must be >= 2");
        if (!(spec.radius > 0.0) || !(spec.sigma > 0.0)) {
            throw RejectedInput("ring-kgmm: radius and sigma must be > 0");
        }
        std::vector<std::vector<GaussianComponent>> comps;
        std::vector<double> priors;
        for (int i = 0; i < spec.k; ++i) {
            const double phi = 2.0 * M_PI * i / spec.k;
            Vec mu(static_cast<size_t>(spec.d), 0.0);
            mu[0] = spec.radius * std::cos(phi);
            mu[1] = spec.radius * std::sin(phi);
            comps.push_back({{mu, spec.sigma, 1.0}});
            priors.push_back(1.0 / spec.k);
        }
        return GmmConditionalModel(std::move(comps), std::move(priors));
    }
    throw RejectedInput("unknown dataset family '" + spec.family +
                        "' (known: symmetric-2gmm, ring-kgmm)");
}

std::vector<std::string> gen_dataset(const DatasetSpec& spec, uint64_t seed,
                                     const std::string& out_dir) {
    if (spec.samples_per_condition < 1) {
        throw RejectedInput("gen_dataset: samples_per_condition must be >= 1");
    }
    const GmmConditionalModel model = make_family_model(spec);
    RunDir run(out_dir);
    std::vector<std::string> names;

    {
        std::ostringstream ss;
        write_model(model, ss);
        run.add("model.txt", ss.str());
        names.push_back("model.txt");
    }
    for (int k = 0; k < model.num_conditions(); ++k) {
        const auto xs = model.sample_data(Condition::class_id(k), spec.samples_per_condition,
                                          derive_seed(seed, static_cast<uint64_t>(k)));
        std::ostringstream ss;
        for (int j = 0; j < model.dim(); ++j) ss << (j ? "," : "") << "x_" << j;
        ss << "\n";
        for (const auto& x : xs) {
            for (int j = 0; j < model.dim(); ++j) {
                ss << (j ? "," : "") << g17(x[static_cast<size_t>(j)]);
            }
            ss << "\n";
        }
        const std::string name = "samples_c" + std::to_string(k) + ".csv";
        run.add(name, ss.str());
        names.push_back(name);
    }
    run.finish("ok");
    return names;
}

// ---------------------------------------------------------------------------
// Backend resolution
// ---------------------------------------------------------------------------

BackendBundle make_backend(const ExperimentConfig& cfg) {
    BackendBundle b;
    b.model = std::make_unique<GmmConditionalModel>(resolve_model(cfg));
    if (cfg.backend == Backend::oracle) {
        b.field = std::make_unique<OracleField>(*b.model);
        return b;
    }
    if (cfg.checkpoint_path.empty()) {
        throw RejectedInput("learned backend requires a checkpoint path");
    }
    b.net = std::make_unique<MlpVelocityNet>(load_checkpoint_file(cfg.checkpoint_path));
    if (b.net->d != b.model->dim() || b.net->n_conditions != b.model->num_conditions()) {
        throw RejectedInput("checkpoint '" + cfg.checkpoint_path +
                            "' does not match the model's dimension or condition count");
    }
    b.field = std::make_unique<NetField>(*b.net);
    return b;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out) {
    out << "run_id,seed,method,final_mse,semantic_score,x2_norm,wall_ms\n";
    for (const auto& r : rows) {
        out << r.run_id << "," << r.seed << "," << r.method << "," << g17(r.final_mse) << ","
            << g17(r.semantic_score) << "," << g17(r.x2_norm) << "," << g17(r.wall_ms) << "\n";
    }
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

ReconstructionResult run_reconstruction(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.kind = ExperimentKind::reconstruct;
    cfg.c_tar = cfg.c_src;
    const BackendBundle backend = make_backend(cfg);
    const TimeGrid grid = TimeGrid::uniform(cfg.n_steps, cfg.n_max_fraction);

    RunDir run(cfg.out_dir);
    run.add("config.ini", config_text(cfg));

    ReconstructionResult result;
    std::vector<double> mse_sum;
    try {
        for (uint64_t seed : cfg.seeds) {
            const auto sources = backend.model->sample_data(
                Condition::class_id(cfg.c_src), cfg.n_sources, derive_seed(seed, kStreamSources));
            for (int j = 0; j < cfg.n_sources; ++j) {
                StopWatch watch;
                const EditReport rep =
                    run_one(*backend.field, sources[static_cast<size_t>(j)], cfg, grid,
                            run_seed(seed, j));
                const double wall = watch.ms();

                if (mse_sum.empty()) {
                    mse_sum.assign(rep.curve_mse.size(), 0.0);
                    result.mean_curve.t = rep.curve_t;
                }
                for (size_t i = 0; i < rep.curve_mse.size(); ++i) mse_sum[i] += rep.curve_mse[i];

                const std::string id = to_string(cfg.method) + "-s" + std::to_string(seed) +
                                       "-i" + std::to_string(j);
                result.rows.push_back(make_row(id, seed, to_string(cfg.method), rep,
                                               *backend.model, cfg.c_tar, wall));
            }
        }
    } catch (...) {
        run.add("metrics.csv", metrics_text(result.rows));
        run.finish("failed");
        throw;
    }

    const double n_runs = static_cast<double>(result.rows.size());
    result.mean_curve.mean_mse.resize(mse_sum.size());
    for (size_t i = 0; i < mse_sum.size(); ++i) {
        result.mean_curve.mean_mse[i] = mse_sum[i] / n_runs;
    }

    {
        std::ostringstream ss;
        ss << "step,t,mse\n";
        for (size_t i = 0; i < mse_sum.size(); ++i) {
            ss << i << "," << g17(result.mean_curve.t[i]) << ","
               << g17(result.mean_curve.mean_mse[i]) << "\n";
        }
        run.add("curve.csv", ss.str());
    }
    run.add("metrics.csv", metrics_text(result.rows));
    run.add("summary.txt", summary_common(cfg, result.rows));
    run.finish("ok");
    return result;
}

std::vector<MetricRow> run_edit(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.kind = ExperimentKind::edit;
    if (cfg.c_src == cfg.c_tar) {
        throw RejectedInput("run_edit: c_src and c_tar must differ (use reconstruct otherwise)");
    }
    const BackendBundle backend = make_backend(cfg);
    const TimeGrid grid = TimeGrid::uniform(cfg.n_steps, cfg.n_max_fraction);

    RunDir run(cfg.out_dir);
    run.add("config.ini", config_text(cfg));

    std::vector<MetricRow> rows;
    try {
        for (uint64_t seed : cfg.seeds) {
            const auto sources = backend.model->sample_data(
                Condition::class_id(cfg.c_src), cfg.n_sources, derive_seed(seed, kStreamSources));
            for (int j = 0; j < cfg.n_sources; ++j) {
                StopWatch watch;
                const EditReport rep = run_one(*backend.field, sources[static_cast<size_t>(j)],
                                               cfg, grid, run_seed(seed, j));
                const double wall = watch.ms();
                const std::string id = to_string(cfg.method) + "-s" + std::to_string(seed) +
                                       "-i" + std::to_string(j);
                rows.push_back(
                    make_row(id, seed, to_string(cfg.method), rep, *backend.model, cfg.c_tar, wall));
            }
        }
    } catch (...) {
        run.add("metrics.csv", metrics_text(rows));
        run.finish("failed");
        throw;
    }

    run.add("metrics.csv", metrics_text(rows));
    run.add("summary.txt", summary_common(cfg, rows));
    run.finish("ok");
    return rows;
}

std::vector<SweepRow> run_guidance_sweep(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.kind = ExperimentKind::sweep;
    cfg.method = Method::flowedit;
    cfg.c_tar = cfg.c_src;
    if (cfg.sweep_omega2.empty()) throw RejectedInput("run_guidance_sweep: empty omega2 list");
    const BackendBundle backend = make_backend(cfg);
    const TimeGrid grid = TimeGrid::uniform(cfg.n_steps, cfg.n_max_fraction);

    RunDir run(cfg.out_dir);
    run.add("config.ini", config_text(cfg));

    std::vector<SweepRow> table;
    std::vector<MetricRow> rows;
    try {
        for (double omega2 : cfg.sweep_omega2) {
            ExperimentConfig point = cfg;
            point.guidance.omega2 = omega2;
            double x2_sum = 0.0;
            double mse_sum = 0.0;
            int count = 0;
            for (uint64_t seed : cfg.seeds) {
                const auto sources =
                    backend.model->sample_data(Condition::class_id(cfg.c_src), cfg.n_sources,
                                               derive_seed(seed, kStreamSources));
                for (int j = 0; j < cfg.n_sources; ++j) {
                    StopWatch watch;
                    const EditReport rep = run_one(*backend.field, sources[static_cast<size_t>(j)],
                                                   point, grid, run_seed(seed, j));
                    const double wall = watch.ms();
                    const std::string id = "flowedit-w" + g17(omega2) + "-s" +
                                           std::to_string(seed) + "-i" + std::to_string(j);
                    MetricRow row = make_row(id, seed, to_string(cfg.method), rep, *backend.model,
                                             cfg.c_tar, wall);
                    x2_sum += row.x2_norm;
                    mse_sum += row.final_mse;
                    ++count;
                    rows.push_back(std::move(row));
                }
            }
            table.push_back({omega2, x2_sum / count, mse_sum / count});
        }
    } catch (...) {
        run.add("metrics.csv", metrics_text(rows));
        run.finish("failed");
        throw;
    }

    {
        std::ostringstream ss;
        ss << "omega2,x2_norm,final_mse\n";
        for (const auto& r : table) {
            ss << g17(r.omega2) << "," << g17(r.x2_norm) << "," << g17(r.final_mse) << "\n";
        }
        run.add("sweep.csv", ss.str());
    }
    run.add("metrics.csv", metrics_text(rows));
    run.add("summary.txt", summary_common(cfg, rows));
    run.finish("ok");
    return table;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.kind = ExperimentKind::ablate;
    cfg.c_tar = cfg.c_src;
    if (cfg.backend != Backend::learned) {
        throw RejectedInput("run_ablation: requires the learned backend");
    }
    const BackendBundle backend = make_backend(cfg);
    const TimeGrid grid = TimeGrid::uniform(cfg.n_steps, cfg.n_max_fraction);

    RunDir run(cfg.out_dir);
    run.add("config.ini", config_text(cfg));

    struct Variant {
        const char* name;
        Method method;
        CorrectionMode mode;
    };
    const Variant variants[] = {
        {"flowedit", Method::flowedit, CorrectionMode::off},
        {"cvc-no-correction", Method::cvc, CorrectionMode::off},
        {"cvc-full", Method::cvc, CorrectionMode::tweedie_residual},
    };

    std::vector<AblationRow> table;
    std::vector<MetricRow> rows;
    try {
        for (const Variant& variant : variants) {
            ExperimentConfig point = cfg;
            point.method = variant.method;
            point.cvc.correction_mode = variant.mode;
            double mse_sum = 0.0;
            double sem_sum = 0.0;
            int count = 0;
            for (uint64_t seed : cfg.seeds) {
                const auto sources =
                    backend.model->sample_data(Condition::class_id(cfg.c_src), cfg.n_sources,
                                               derive_seed(seed, kStreamSources));
                for (int j = 0; j < cfg.n_sources; ++j) {
                    StopWatch watch;
                    const EditReport rep = run_one(*backend.field, sources[static_cast<size_t>(j)],
                                                   point, grid, run_seed(seed, j));
                    const double wall = watch.ms();
                    const std::string id = std::string(variant.name) + "-s" +
                                           std::to_string(seed) + "-i" + std::to_string(j);
                    MetricRow row =
                        make_row(id, seed, variant.name, rep, *backend.model, cfg.c_tar, wall);
                    mse_sum += row.final_mse;
                    sem_sum += row.semantic_score;
                    ++count;
                    rows.push_back(std::move(row));
                }
            }
            table.push_back({variant.name, mse_sum / count, sem_sum / count});
        }
    } catch (...) {
        run.add("metrics.csv", metrics_text(rows));
        run.finish("failed");
        throw;
    }

    {
        std::ostringstream ss;
        ss << "variant,final_mse,semantic_score\n";
        for (const auto& r : table) {
            ss << r.variant << "," << g17(r.mean_final_mse) << "," << g17(r.mean_semantic) << "\n";
        }
        run.add("ablation.csv", ss.str());
    }
    run.add("metrics.csv", metrics_text(rows));
    run.add("summary.txt", summary_common(cfg, rows));
    run.finish("ok");
    return table;
}

TrainResult run_training(const ExperimentConfig& cfg) {
    const GmmConditionalModel model = resolve_model(cfg);
    MlpVelocityNet net =
        MlpVelocityNet::make(model.dim(), model.num_conditions(), cfg.hidden_widths,
                             cfg.train.seed);
    const TrainResult tr = train(net, model, cfg.train);

    RunDir run(cfg.out_dir);
    run.add("config.ini", config_text(cfg));
    {
        CheckpointMeta meta;
        meta.seed = cfg.train.seed;
        meta.epochs = cfg.train.epochs;
        meta.final_loss = tr.epoch_loss.back();
        std::ostringstream ss;
        save_checkpoint(net, meta, ss);
        run.add("checkpoint.txt", ss.str());
    }
    {
        std::ostringstream ss;
        write_loss_history_csv(tr, ss);
        run.add("loss.csv", ss.str());
    }
    run.finish("ok");
    return tr;
}

// ---------------------------------------------------------------------------
// Hashing, manifests, reruns
// ---------------------------------------------------------------------------

uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 14695981039346656037ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RejectedInput("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string hash_file(const std::string& path) {
    const std::string bytes = read_file(path);
    return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

void atomic_write_file(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw RejectedInput("cannot write '" + tmp + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw RejectedInput("short write to '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
    std::ostringstream ss;
    ss << "run-manifest v1\n";
    ss << "tool " << manifest.tool_version << "\n";
    ss << "created " << manifest.created << "\n";
    ss << "status " << manifest.status << "\n";
    for (const auto& [name, hash] : manifest.artifacts) {
        ss << "artifact " << name << " " << hash << "\n";
    }
    atomic_write_file(path, ss.str());
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RejectedInput("cannot open manifest '" + path + "'");
    RunManifest m;
    std::string line;
    if (!std::getline(in, line) || trim(line) != "run-manifest v1") {
        throw RejectedInput("manifest '" + path + "': bad header");
    }
    while (std::getline(in, line)) {
        const std::string body = trim(line);
        if (body.empty()) continue;
        std::istringstream ss(body);
        std::string tag;
        ss >> tag;
        if (tag == "tool") {
            m.tool_version = trim(body.substr(4));
        } else if (tag == "created") {
            ss >> m.created;
        } else if (tag == "status") {
            ss >> m.status;
        } else if (tag == "artifact") {
            std::string name, hash;
            if (!(ss >> name >> hash)) {
                throw RejectedInput("manifest '" + path + "': bad artifact line");
            }
            m.artifacts.emplace_back(name, hash);
        } else {
            throw RejectedInput("manifest '" + path + "': unknown line '" + body + "'");
        }
    }
    return m;
}

namespace {

void execute_experiment(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case ExperimentKind::reconstruct: run_reconstruction(cfg); return;
        case ExperimentKind::edit: run_edit(cfg); return;
        case ExperimentKind::sweep: run_guidance_sweep(cfg); return;
        case ExperimentKind::ablate: run_ablation(cfg); return;
    }
    throw RejectedInput("unknown experiment kind in config");
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

/// Byte comparison with one column name masked (for wall-clock fields).
bool files_equal_masked(const std::string& path_a, const std::string& path_b,
                        const std::string& masked_column) {
    std::istringstream a(read_file(path_a));
    std::istringstream b(read_file(path_b));
    std::string la, lb;
    int masked_index = -1;
    bool first = true;
    while (true) {
        const bool got_a = static_cast<bool>(std::getline(a, la));
        const bool got_b = static_cast<bool>(std::getline(b, lb));
        if (got_a != got_b) return false;
        if (!got_a) return true;
        if (first) {
            first = false;
            if (la != lb) return false;
            const auto header = split_csv_line(la);
            for (size_t i = 0; i < header.size(); ++i) {
                if (header[i] == masked_column) masked_index = static_cast<int>(i);
            }
            continue;
        }
        if (masked_index < 0) {
            if (la != lb) return false;
            continue;
        }
        auto fa = split_csv_line(la);
        auto fb = split_csv_line(lb);
        if (fa.size() != fb.size()) return false;
        for (size_t i = 0; i < fa.size(); ++i) {
            if (static_cast<int>(i) == masked_index) continue;
            if (fa[i] != fb[i]) return false;
        }
    }
}

}  // namespace

RerunCheck verify_rerun(const std::string& run_dir, const std::string& rerun_dir) {
    const RunManifest manifest = read_manifest(run_dir + "/manifest.txt");
    ExperimentConfig cfg = load_config(run_dir + "/config.ini");
    cfg.out_dir = rerun_dir;
    execute_experiment(cfg);

    RerunCheck check;
    check.identical = true;
    for (const auto& [name, hash] : manifest.artifacts) {
        const std::string original = run_dir + "/" + name;
        const std::string replayed = rerun_dir + "/" + name;
        if (!fs::exists(replayed)) {
            check.identical = false;
            check.mismatches.push_back(name + ": missing in rerun");
            continue;
        }
        const bool equal = (name == "metrics.csv")
                               ? files_equal_masked(original, replayed, "wall_ms")
                               : read_file(original) == read_file(replayed);
        if (!equal) {
            check.identical = false;
            check.mismatches.push_back(name + ": contents differ");
        }
        if (name != "metrics.csv" && hash_file(replayed) != hash) {
            check.identical = false;
            check.mismatches.push_back(name + ": hash differs from manifest");
        }
    }
    return check;
}

std::vector<MetricRow> merge_reports(const std::string& root) {
    if (!fs::exists(root)) throw RejectedInput("report root '" + root + "' does not exist");
    std::vector<std::string> paths;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") {
            paths.push_back(entry.path().string());
        }
    }
    std::sort(paths.begin(), paths.end());

    std::vector<MetricRow> rows;
    for (const auto& path : paths) {
        std::istringstream in(read_file(path));
        std::string line;
        if (!std::getline(in, line)) continue;
        if (trim(line) != "run_id,seed,method,final_mse,semantic_score,x2_norm,wall_ms") {
            throw RejectedInput("'" + path + "': unexpected metrics header");
        }
        int line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 7) {
                throw RejectedInput("'" + path + "' line " + std::to_string(line_no) +
                                    ": expected 7 fields");
            }
            MetricRow row;
            row.run_id = f[0];
            try {
                row.seed = std::stoull(f[1]);
                row.method = f[2];
                row.final_mse = std::stod(f[3]);
                row.semantic_score = std::stod(f[4]);
                row.x2_norm = std::stod(f[5]);
                row.wall_ms = std::stod(f[6]);
            } catch (const std::logic_error&) {
                throw RejectedInput("'" + path + "' line " + std::to_string(line_no) +
                                    ": malformed numeric field");
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace flowlab
