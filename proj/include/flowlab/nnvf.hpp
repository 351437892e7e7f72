#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowlab/flowcore.hpp"
#include "flowlab/oracle.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

/// Small tanh MLP realizing a conditional velocity field. Input encoding is
/// the raw concatenation [z, t, one-hot(class), null-flag]; the null flag is 1
/// with a zeroed one-hot for the unconditional branch.
struct MlpVelocityNet {
    int d = 0;
    int n_conditions = 0;
    std::vector<int> widths;                // full chain: input, hidden..., d
    std::vector<std::vector<double>> w;     // w[l]: widths[l+1] x widths[l], row-major
    std::vector<std::vector<double>> b;     // b[l]: widths[l+1]

    static MlpVelocityNet make(int d, int n_conditions, const std::vector<int>& hidden_widths,
                               uint64_t seed);

    int input_dim() const { return d + 1 + n_conditions + 1; }
    int n_layers() const { return static_cast<int>(w.size()); }
    size_t param_count() const;

    Vec encode(const Vec& z, double t, const Condition& c) const;
    Vec eval(const Vec& z, double t, const Condition& c) const;
};

/// VelocityField adapter over a frozen net.
class NetField final : public VelocityField {
public:
    explicit NetField(const MlpVelocityNet& net) : net_(&net) {}
    int dim() const override { return net_->d; }
    Vec eval(const Vec& z, double t, const Condition& c) const override {
        return net_->eval(z, t, c);
    }

private:
    const MlpVelocityNet* net_;
};

struct TrainBatch {
    std::vector<Vec> x0;
    std::vector<Vec> noise;
    std::vector<double> t;
    std::vector<Condition> c;

    size_t size() const { return x0.size(); }
};

/// Loss and exact parameter gradients, same shapes as the net's w/b.
struct LossGrad {
    double loss = 0.0;
    std::vector<std::vector<double>> gw;
    std::vector<std::vector<double>> gb;
};

/// Mean squared error (per element) between the net's prediction at the
/// interpolated latent and the regression target (noise - x0), with gradients
/// by backpropagation.
LossGrad fm_loss(const MlpVelocityNet& net, const TrainBatch& batch);

struct TrainConfig {
    double learning_rate = 0.05;
    int batch_size = 64;
    int epochs = 120;
    int steps_per_epoch = 100;
    double p_drop = 0.1;  // condition dropout probability, realizes the null branch
    uint64_t seed = 1;
};

struct TrainResult {
    std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Plain seeded SGD on fresh batches sampled from the model. Throws
/// TrainingDiverged when the loss is non-finite or stays above 10x the
/// initial epoch loss for 3 consecutive epochs.
TrainResult train(MlpVelocityNet& net, const GmmConditionalModel& model, const TrainConfig& cfg);

struct CheckpointMeta {
    uint64_t seed = 0;
    int epochs = 0;
    double final_loss = 0.0;
};

/// Structured-text checkpoint; save-then-load reproduces eval bit-exactly.
void save_checkpoint(const MlpVelocityNet& net, const CheckpointMeta& meta, std::ostream& out);
MlpVelocityNet load_checkpoint(std::istream& in, CheckpointMeta* meta = nullptr);
void save_checkpoint_file(const MlpVelocityNet& net, const CheckpointMeta& meta,
                          const std::string& path);
MlpVelocityNet load_checkpoint_file(const std::string& path, CheckpointMeta* meta = nullptr);

void write_loss_history_csv(const TrainResult& result, std::ostream& out);

}  // namespace flowlab
