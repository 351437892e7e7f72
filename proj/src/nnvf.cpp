#include "flowlab/nnvf.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "flowlab/rng.hpp"
#include "flowlab/textio.hpp"

namespace flowlab {

namespace {

// Forward pass keeping every activation; a[0] is the encoded input, a[L] the
// linear output layer.
struct ForwardCache {
    std::vector<Vec> a;
};

Vec forward(const MlpVelocityNet& net, const Vec& input, ForwardCache* cache) {
    Vec a = input;
    if (cache) cache->a.push_back(a);
    for (int l = 0; l < net.n_layers(); ++l) {
        const size_t n_out = static_cast<size_t>(net.widths[static_cast<size_t>(l) + 1]);
        const size_t n_in = static_cast<size_t>(net.widths[static_cast<size_t>(l)]);
        Vec next(n_out);
        const auto& wl = net.w[static_cast<size_t>(l)];
        const auto& bl = net.b[static_cast<size_t>(l)];
        for (size_t r = 0; r < n_out; ++r) {
            double s = bl[r];
            const double* row = wl.data() + r * n_in;
            for (size_t q = 0; q < n_in; ++q) s += row[q] * a[q];
            next[r] = s;
        }
        const bool last = (l == net.n_layers() - 1);
        if (!last) {
            for (double& x : next) x = std::tanh(x);
        }
        a = std::move(next);
        if (cache) cache->a.push_back(a);
    }
    return a;
}

}  // namespace

MlpVelocityNet MlpVelocityNet::make(int d, int n_conditions, const std::vector<int>& hidden_widths,
                                    uint64_t seed) {
    if (d < 1) throw RejectedInput("MlpVelocityNet: d must be >= 1");
    if (n_conditions < 1) throw RejectedInput("MlpVelocityNet: n_conditions must be >= 1");
    MlpVelocityNet net;
    net.d = d;
    net.n_conditions = n_conditions;
    net.widths.push_back(net.input_dim());
    for (int h : hidden_widths) {
        if (h < 1) throw RejectedInput("MlpVelocityNet: hidden width must be >= 1");
        net.widths.push_back(h);
    }
    net.widths.push_back(d);

    Rng rng(seed);
    for (size_t l = 0; l + 1 < net.widths.size(); ++l) {
        const size_t n_in = static_cast<size_t>(net.widths[l]);
        const size_t n_out = static_cast<size_t>(net.widths[l + 1]);
        const double bound = std::sqrt(6.0 / static_cast<double>(n_in + n_out));
        std::vector<double> wl(n_in * n_out);
        for (double& x : wl) x = (2.0 * rng.uniform() - 1.0) * bound;
        net.w.push_back(std::move(wl));
        net.b.emplace_back(n_out, 0.0);
    }
    return net;
}

size_t MlpVelocityNet::param_count() const {
    size_t n = 0;
    for (size_t l = 0; l < w.size(); ++l) n += w[l].size() + b[l].size();
    return n;
}

Vec MlpVelocityNet::encode(const Vec& z, double t, const Condition& c) const {
    if (static_cast<int>(z.size()) != d) throw RejectedInput("net: latent dimension mismatch");
    Vec in(static_cast<size_t>(input_dim()), 0.0);
    for (int j = 0; j < d; ++j) in[static_cast<size_t>(j)] = z[static_cast<size_t>(j)];
    in[static_cast<size_t>(d)] = t;
    if (c.is_null()) {
        in[static_cast<size_t>(d + 1 + n_conditions)] = 1.0;
    } else {
        if (c.id() >= n_conditions) throw RejectedInput("net: class id out of range");
        in[static_cast<size_t>(d + 1 + c.id())] = 1.0;
    }
    return in;
}

Vec MlpVelocityNet::eval(const Vec& z, double t, const Condition& c) const {
    return forward(*this, encode(z, t, c), nullptr);
}

LossGrad fm_loss(const MlpVelocityNet& net, const TrainBatch& batch) {
    if (batch.size() == 0) throw RejectedInput("fm_loss: empty batch");
    LossGrad out;
    out.gw.resize(net.w.size());
    out.gb.resize(net.b.size());
    for (size_t l = 0; l < net.w.size(); ++l) {
        out.gw[l].assign(net.w[l].size(), 0.0);
        out.gb[l].assign(net.b[l].size(), 0.0);
    }

    const double inv_bd = 1.0 / (static_cast<double>(batch.size()) * net.d);
    for (size_t s = 0; s < batch.size(); ++s) {
        const Vec z_t = interpolate(batch.x0[s], batch.noise[s], batch.t[s]);
        ForwardCache cache;
        Vec pred = forward(net, net.encode(z_t, batch.t[s], batch.c[s]), &cache);

        // delta at the linear output layer
        Vec delta(pred.size());
        for (size_t j = 0; j < pred.size(); ++j) {
            const double target = batch.noise[s][j] - batch.x0[s][j];
            const double r = pred[j] - target;
            out.loss += r * r * inv_bd;
            delta[j] = 2.0 * r * inv_bd;
        }

        for (int l = net.n_layers() - 1; l >= 0; --l) {
            const size_t n_out = static_cast<size_t>(net.widths[static_cast<size_t>(l) + 1]);
            const size_t n_in = static_cast<size_t>(net.widths[static_cast<size_t>(l)]);
            const Vec& a_in = cache.a[static_cast<size_t>(l)];
            auto& gw = out.gw[static_cast<size_t>(l)];
            auto& gb = out.gb[static_cast<size_t>(l)];
            Vec delta_in(n_in, 0.0);
            const auto& wl = net.w[static_cast<size_t>(l)];
            for (size_t r = 0; r < n_out; ++r) {
                const double dr = delta[r];
                gb[r] += dr;
                double* grow = gw.data() + r * n_in;
                const double* wrow = wl.data() + r * n_in;
                for (size_t q = 0; q < n_in; ++q) {
                    grow[q] += dr * a_in[q];
                    delta_in[q] += dr * wrow[q];
                }
            }
            if (l > 0) {
                // back through tanh of the previous layer's activation
                for (size_t q = 0; q < n_in; ++q) delta_in[q] *= 1.0 - a_in[q] * a_in[q];
            }
            delta = std::move(delta_in);
        }
    }
    if (!std::isfinite(out.loss)) {
        throw TrainingDiverged("fm_loss: non-finite loss");
    }
    return out;
}

TrainResult train(MlpVelocityNet& net, const GmmConditionalModel& model, const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw RejectedInput("train: learning rate must be > 0");
    if (!(cfg.p_drop >= 0.0 && cfg.p_drop < 1.0)) throw RejectedInput("train: p_drop must be in [0,1)");
    if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.steps_per_epoch < 1) {
        throw RejectedInput("train: batch_size, epochs, steps_per_epoch must be >= 1");
    }
    if (model.dim() != net.d || model.num_conditions() != net.n_conditions) {
        throw RejectedInput("train: net and model disagree on dim or condition count");
    }

    Rng rng(cfg.seed);
    TrainResult result;
    double initial_loss = 0.0;
    int high_loss_streak = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            TrainBatch batch;
            batch.x0.reserve(static_cast<size_t>(cfg.batch_size));
            for (int s = 0; s < cfg.batch_size; ++s) {
                // class draw from the priors, then a sample of that class
                double u = rng.uniform();
                int cls = model.num_conditions() - 1;
                double acc = 0.0;
                for (int k = 0; k < model.num_conditions(); ++k) {
                    acc += model.class_prior(k);
                    if (u < acc) {
                        cls = k;
                        break;
                    }
                }
                const auto& comps = model.components(cls);
                double uc = rng.uniform();
                size_t pick = comps.size() - 1;
                double cacc = 0.0;
                for (size_t k = 0; k < comps.size(); ++k) {
                    cacc += comps[k].weight;
                    if (uc < cacc) {
                        pick = k;
                        break;
                    }
                }
                Vec x = rng.gaussian_vec(net.d);
                for (int j = 0; j < net.d; ++j) {
                    x[static_cast<size_t>(j)] =
                        comps[pick].mean[static_cast<size_t>(j)] + comps[pick].sigma * x[static_cast<size_t>(j)];
                }
                batch.x0.push_back(std::move(x));
                batch.noise.push_back(rng.gaussian_vec(net.d));
                double t = rng.uniform();
                if (t <= 0.0) t = 0.5;  // keep t in (0,1)
                batch.t.push_back(t);
                const bool drop = rng.uniform() < cfg.p_drop;
                batch.c.push_back(drop ? Condition::null() : Condition::class_id(cls));
            }

            LossGrad lg = fm_loss(net, batch);
            epoch_loss += lg.loss;
            for (size_t l = 0; l < net.w.size(); ++l) {
                auto& wl = net.w[l];
                const auto& gwl = lg.gw[l];
                for (size_t i = 0; i < wl.size(); ++i) wl[i] -= cfg.learning_rate * gwl[i];
                auto& bl = net.b[l];
                const auto& gbl = lg.gb[l];
                for (size_t i = 0; i < bl.size(); ++i) bl[i] -= cfg.learning_rate * gbl[i];
            }
        }
        epoch_loss /= cfg.steps_per_epoch;
        result.epoch_loss.push_back(epoch_loss);

        if (!std::isfinite(epoch_loss)) {
            throw TrainingDiverged("train: non-finite epoch loss at epoch " + std::to_string(epoch));
        }
        if (epoch == 0) {
            initial_loss = epoch_loss;
        } else if (epoch_loss > 10.0 * initial_loss) {
            if (++high_loss_streak >= 3) {
                throw TrainingDiverged("train: loss above 10x initial for 3 consecutive epochs");
            }
        } else {
            high_loss_streak = 0;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

void save_checkpoint(const MlpVelocityNet& net, const CheckpointMeta& meta, std::ostream& out) {
    out << "mlpvf-checkpoint v1\n";
    out << "d " << net.d << "\n";
    out << "conditions " << net.n_conditions << "\n";
    out << "widths";
    for (int wd : net.widths) out << " " << wd;
    out << "\n";
    out << "params " << net.param_count() << "\n";
    // layer order, weights row-major then biases
    for (size_t l = 0; l < net.w.size(); ++l) {
        for (double x : net.w[l]) out << g17(x) << "\n";
        for (double x : net.b[l]) out << g17(x) << "\n";
    }
    out << "meta seed " << meta.seed << "\n";
    out << "meta epochs " << meta.epochs << "\n";
    out << "meta final_loss " << g17(meta.final_loss) << "\n";
}

MlpVelocityNet load_checkpoint(std::istream& in, CheckpointMeta* meta) {
    std::string header, version;
    if (!(in >> header >> version)) {
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint: empty or unreadable");
    }
    if (header != "mlpvf-checkpoint") {
        throw CheckpointError(CheckpointError::Kind::parse, "checkpoint: bad header '" + header + "'");
    }
    if (version != "v1") {
        throw CheckpointError(CheckpointError::Kind::version,
                              "checkpoint: unknown version tag '" + version + "'");
    }

    MlpVelocityNet net;
    std::string tag;
    size_t declared_params = 0;
    if (!(in >> tag >> net.d) || tag != "d") {
        throw CheckpointError(CheckpointError::Kind::parse, "checkpoint: missing 'd'");
    }
    if (!(in >> tag >> net.n_conditions) || tag != "conditions") {
        throw CheckpointError(CheckpointError::Kind::parse, "checkpoint: missing 'conditions'");
    }
    if (!(in >> tag) || tag != "widths") {
        throw CheckpointError(CheckpointError::Kind::parse, "checkpoint: missing 'widths'");
    }
    {
        std::string rest;
        std::getline(in, rest);
        std::istringstream ss(rest);
        int wd;
        while (ss >> wd) net.widths.push_back(wd);
    }
    if (net.widths.size() < 2 || net.d < 1 || net.n_conditions < 1 ||
        net.widths.front() != net.d + 1 + net.n_conditions + 1 || net.widths.back() != net.d) {
        throw CheckpointError(CheckpointError::Kind::shape, "checkpoint: inconsistent widths");
    }
    if (!(in >> tag >> declared_params) || tag != "params") {
        throw CheckpointError(CheckpointError::Kind::parse, "checkpoint: missing 'params'");
    }

    size_t expected = 0;
    for (size_t l = 0; l + 1 < net.widths.size(); ++l) {
        const size_t n_in = static_cast<size_t>(net.widths[l]);
        const size_t n_out = static_cast<size_t>(net.widths[l + 1]);
        expected += n_in * n_out + n_out;
    }
    if (declared_params != expected) {
        throw CheckpointError(CheckpointError::Kind::shape,
                              "checkpoint: parameter count " + std::to_string(declared_params) +
                                  " does not match widths (expected " + std::to_string(expected) + ")");
    }

    for (size_t l = 0; l + 1 < net.widths.size(); ++l) {
        const size_t n_in = static_cast<size_t>(net.widths[l]);
        const size_t n_out = static_cast<size_t>(net.widths[l + 1]);
        std::vector<double> wl(n_in * n_out);
        for (double& x : wl) {
            if (!(in >> x)) {
                throw CheckpointError(CheckpointError::Kind::truncated,
                                      "checkpoint: truncated parameter block");
            }
        }
        std::vector<double> bl(n_out);
        for (double& x : bl) {
            if (!(in >> x)) {
                throw CheckpointError(CheckpointError::Kind::truncated,
                                      "checkpoint: truncated parameter block");
            }
        }
        net.w.push_back(std::move(wl));
        net.b.push_back(std::move(bl));
    }
    for (const auto& wl : net.w) {
        for (double x : wl) {
            if (!std::isfinite(x)) {
                throw CheckpointError(CheckpointError::Kind::parse, "checkpoint: non-finite parameter");
            }
        }
    }

    CheckpointMeta m;
    std::string key;
    while (in >> tag >> key) {
        if (tag != "meta") {
            throw CheckpointError(CheckpointError::Kind::parse,
                                  "checkpoint: unexpected trailing token '" + tag + "'");
        }
        if (key == "seed") {
            if (!(in >> m.seed)) break;
        } else if (key == "epochs") {
            if (!(in >> m.epochs)) break;
        } else if (key == "final_loss") {
            if (!(in >> m.final_loss)) break;
        } else {
            std::string skip;
            in >> skip;
        }
    }
    if (meta) *meta = m;
    return net;
}

void save_checkpoint_file(const MlpVelocityNet& net, const CheckpointMeta& meta,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RejectedInput("cannot write checkpoint '" + path + "'");
    save_checkpoint(net, meta, out);
}

MlpVelocityNet load_checkpoint_file(const std::string& path, CheckpointMeta* meta) {
    std::ifstream in(path);
    if (!in) throw RejectedInput("cannot open checkpoint '" + path + "'");
    return load_checkpoint(in, meta);
}

void write_loss_history_csv(const TrainResult& result, std::ostream& out) {
    out << "epoch,loss\n";
    for (size_t e = 0; e < result.epoch_loss.size(); ++e) {
        out << e << "," << g17(result.epoch_loss[e]) << "\n";
    }
}

}  // namespace flowlab
