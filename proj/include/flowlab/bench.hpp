#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "flowlab/editors.hpp"
#include "flowlab/nnvf.hpp"
#include "flowlab/oracle.hpp"

namespace flowlab {

enum class Backend { oracle, learned };
enum class Method { flowedit, cvc };
enum class ExperimentKind { reconstruct, edit, sweep, ablate };

std::string to_string(Backend b);
std::string to_string(Method m);
std::string to_string(ExperimentKind k);
std::string to_string(CorrectionMode m);
Backend backend_from_string(const std::string& s);
Method method_from_string(const std::string& s);
ExperimentKind kind_from_string(const std::string& s);
CorrectionMode correction_mode_from_string(const std::string& s);

/// Everything a run needs; serialized to config.ini inside the run directory
/// so the run can be replayed verbatim.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::reconstruct;
    Backend backend = Backend::oracle;
    std::string checkpoint_path;  // required for the learned backend
    std::string model_path;       // empty selects the built-in two-class default
    Method method = Method::cvc;
    int n_steps = 50;
    double n_max_fraction = 1.0;
    int c_src = 0;
    int c_tar = 1;  // forced equal to c_src in reconstruction and sweep runs
    int n_sources = 20;
    std::vector<uint64_t> seeds = {1};
    std::string out_dir = "out";
    GuidanceParams guidance;
    CvcParams cvc;
    std::vector<double> sweep_omega2 = {1.0, 2.0, 4.0, 8.0};
    TrainConfig train;
    std::vector<int> hidden_widths = {64, 64, 64};
};

/// INI-style `key = value` lines under `[section]` headers; `#` comments.
/// Unknown sections or keys are rejected. Grammar documented in the README.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
void write_config(const ExperimentConfig& cfg, std::ostream& out);
void save_config(const ExperimentConfig& cfg, const std::string& path);

/// Built-in dataset families.
struct DatasetSpec {
    std::string family = "symmetric-2gmm";  // or ring-kgmm
    int d = 2;
    double sep = 4.0;     // symmetric-2gmm: distance between the two means
    double sigma = 0.5;
    int k = 8;            // ring-kgmm: number of conditions
    double radius = 4.0;  // ring-kgmm: circle radius in the first two dims
    int samples_per_condition = 200;
};

/// Unknown family is rejected with the list of known ones.
GmmConditionalModel make_family_model(const DatasetSpec& spec);

/// Writes model.txt plus samples_c<k>.csv per condition into out_dir.
/// Returns the written file names (relative to out_dir).
std::vector<std::string> gen_dataset(const DatasetSpec& spec, uint64_t seed,
                                     const std::string& out_dir);

/// Model + velocity field resolved from a config. The model always backs the
/// metrics, also under the learned backend.
struct BackendBundle {
    std::unique_ptr<GmmConditionalModel> model;
    std::unique_ptr<MlpVelocityNet> net;  // learned backend only
    std::unique_ptr<VelocityField> field;
};
BackendBundle make_backend(const ExperimentConfig& cfg);

/// One metrics.csv row. Wall-clock is informational and excluded from
/// byte-identity checks; every other column is deterministic.
struct MetricRow {
    std::string run_id;
    uint64_t seed = 0;
    std::string method;
    double final_mse = 0.0;
    double semantic_score = 0.0;
    double x2_norm = 0.0;
    double wall_ms = 0.0;
};
void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out);

/// Mean per-state MSE curve over all (seed, source) runs.
struct CurveStat {
    std::vector<double> t;
    std::vector<double> mean_mse;
};

struct ReconstructionResult {
    std::vector<MetricRow> rows;
    CurveStat mean_curve;
};

struct SweepRow {
    double omega2 = 0.0;
    double x2_norm = 0.0;   // mean accumulated unconditional displacement norm
    double final_mse = 0.0; // mean over (seed, source)
};

struct AblationRow {
    std::string variant;  // flowedit | cvc-no-correction | cvc-full
    double mean_final_mse = 0.0;
    double mean_semantic = 0.0;
};

/// Editing degenerated to reconstruction: c_tar is forced to c_src. Emits
/// curve.csv, metrics.csv, summary.txt, config.ini, manifest.txt.
ReconstructionResult run_reconstruction(const ExperimentConfig& cfg);

/// Cross-class editing run (c_src != c_tar required). Semantic score is the
/// exact-model posterior probability of c_tar at the output.
std::vector<MetricRow> run_edit(const ExperimentConfig& cfg);

/// Reconstruction-setting sweep over omega2 with the baseline editor. Emits
/// sweep.csv plus the standard run files.
std::vector<SweepRow> run_guidance_sweep(const ExperimentConfig& cfg);

/// Three variants (flowedit, cvc-no-correction, cvc-full) on identical
/// seeds and sources in the reconstruction setting (c_tar forced to c_src),
/// learned backend only. Emits ablation.csv plus the standard run files.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg);

/// Trains a network for the config's model and writes checkpoint.txt,
/// loss.csv, config.ini, manifest.txt into cfg.out_dir.
TrainResult run_training(const ExperimentConfig& cfg);

/// FNV-1a 64-bit content hash, and its lowercase hex form.
uint64_t fnv1a64(const void* data, size_t n);
std::string hash_hex(uint64_t h);
std::string hash_file(const std::string& path);

/// Write-then-rename so concurrent readers never see partial files.
void atomic_write_file(const std::string& path, const std::string& contents);

struct RunManifest {
    std::string tool_version;
    std::string created;  // informational timestamp, not hashed content
    std::string status = "ok";
    std::vector<std::pair<std::string, std::string>> artifacts;  // name, content hash
};
void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);

/// Replays the run recorded in run_dir (config.ini + manifest.txt) into
/// rerun_dir and compares every manifest-listed CSV byte for byte. The
/// wall_ms column of metrics.csv is the one allowed difference.
struct RerunCheck {
    bool identical = false;
    std::vector<std::string> mismatches;
};
RerunCheck verify_rerun(const std::string& run_dir, const std::string& rerun_dir);

/// Merges every metrics.csv found under root (recursively, sorted order)
/// into a single table.
std::vector<MetricRow> merge_reports(const std::string& root);

}  // namespace flowlab
