#include "xcpd/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "xcpd/errors.hpp"

namespace xcpd {

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}

void PluginConfig::validate() const {
    if (channels == 0 || horizon == 0) throw ConfigError("config: channels and horizon required");
    if (patch_len == 0 || patch_len > horizon)
        throw ConfigError("config: patch length must be in [1, horizon]");
    if (embed_dim == 0) throw ConfigError("config: embed dimension must be positive");
    if (gnn_layers == 0) throw ConfigError("config: at least one propagation layer");
    if (knn_alpha <= 0.0 || knn_alpha > 1.0) throw ConfigError("config: knn alpha in (0, 1]");
    if (router_tau < 0.0 || router_tau > 1.0) throw ConfigError("config: router tau in [0, 1]");
    if (noise_eps < 0.0) throw ConfigError("config: noise eps must be nonnegative");
    if (temperature <= 0.0) throw ConfigError("config: temperature must be positive");
    if (mu < 0.0 || beta < 0.0) throw ConfigError("config: loss weights must be nonnegative");
    if (delta_stab <= 0.0) throw ConfigError("config: stability constant must be positive");
    if (band_tau1 != 0.0 || band_tau2 != 0.0) {
        const double n = static_cast<double>(node_count());
        if (!(band_tau1 >= 1.0 && band_tau1 < band_tau2 && band_tau2 <= n))
            throw ConfigError("config: band boundaries must satisfy 1 <= tau1 < tau2 <= n");
    }
}

std::pair<double, double> PluginConfig::band_taus() const {
    if (band_tau1 != 0.0 || band_tau2 != 0.0) return {band_tau1, band_tau2};
    const double n = static_cast<double>(node_count());
    return {n / 3.0, 2.0 * n / 3.0};
}

PluginParameters zero_params(const PluginConfig& config) {
    config.validate();
    const std::size_t p = config.patch_len;
    const std::size_t d = config.embed_dim;
    const std::size_t t = config.horizon;

    PluginParameters out;
    out.embed_w = DenseMatrix(p, d, 0.0);
    out.embed_b.assign(d, 0.0);
    out.router_clean_w = DenseMatrix(d, 3, 0.0);
    out.router_noise_w = DenseMatrix(d, 3, 0.0);
    out.gnn.resize(config.gnn_layers);
    for (GnnLayerParams& layer : out.gnn) {
        layer.w_self = DenseMatrix(d, d, 0.0);
        layer.w_neigh = DenseMatrix(d, d, 0.0);
        layer.bias.assign(d, 0.0);
    }
    out.node_proj_w = DenseMatrix(d, p, 0.0);
    out.node_proj_b.assign(p, 0.0);
    out.time_proj_w = DenseMatrix(t, t, 0.0);
    out.time_proj_b.assign(t, 0.0);
    out.lin_path_w = DenseMatrix(t, t, 0.0);
    out.lin_path_b.assign(t, 0.0);
    out.gate_gnn.assign(config.channels, 0.0);
    out.gate_lin.assign(config.channels, 0.0);
    return out;
}

PluginParameters init_params(const PluginConfig& config, Rng& rng) {
    PluginParameters out = zero_params(config);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
    for (double& v : out.embed_w.values()) v = rng.uniform(-bound, bound);
    for (double& v : out.embed_b) v = rng.uniform(-bound, bound);
    for (double& v : out.router_clean_w.values()) v = rng.uniform(-bound, bound);
    for (double& v : out.router_clean_b) v = rng.uniform(-bound, bound);
    for (double& v : out.router_noise_w.values()) v = rng.uniform(-bound, bound);
    for (double& v : out.router_noise_b) v = rng.uniform(-bound, bound);
    // The message-passing stack and the per-node projection start random.
    // Zeroing them too would freeze the whole graph path: their gradients
    // pass through each other and the relu mask, all zero at a zero start.
    // The residual-identity guarantee needs only the outer maps (time
    // projection, linear path) at zero, which kills both corrections.
    for (GnnLayerParams& layer : out.gnn) {
        for (double& v : layer.w_self.values()) v = rng.uniform(-bound, bound);
        for (double& v : layer.w_neigh.values()) v = rng.uniform(-bound, bound);
        for (double& v : layer.bias) v = rng.uniform(-bound, bound);
    }
    for (double& v : out.node_proj_w.values()) v = rng.uniform(-bound, bound);
    for (double& v : out.node_proj_b) v = rng.uniform(-bound, bound);
    return out;
}

namespace {

// Shared body of forward and forward_frozen. When `structure` is non-null the
// discrete pieces (groups, ego topology, expert sets, filtered adjacency,
// noise draws) are replayed from it; only the continuous paths recompute.
ForwardTrace run_forward(const DenseMatrix& backbone_pred, const PluginParameters& params,
                         const PluginConfig& config, const SharedBasis& basis, bool training,
                         Rng* rng, const ForwardTrace* structure) {
    config.validate();
    if (backbone_pred.rows() != config.channels || backbone_pred.cols() != config.horizon)
        throw ConfigError("forward: prediction shape differs from config");
    const std::size_t n = config.node_count();
    if (basis.size() != n) throw ConfigError("forward: basis size differs from node count");

    ForwardTrace trace;
    trace.backbone = backbone_pred;
    PatchResult pr = patch(backbone_pred, config.patch_len);
    trace.grid = pr.grid;
    trace.patches = std::move(pr.patches);
    trace.embeddings = embed(trace.patches, params.embed_w, params.embed_b);
    const std::size_t d = config.embed_dim;

    if (structure) {
        trace.spectral = structure->spectral;
        trace.energy = structure->energy;
        trace.bands = structure->bands;
        trace.groups = structure->groups;
        trace.ego = structure->ego;
    } else {
        trace.spectral = gft(basis, trace.embeddings);
        trace.energy = energy_response(basis, trace.spectral);
        const auto [tau1, tau2] = config.band_taus();
        trace.bands = band_memberships(tau1, tau2, config.temperature, n);
        trace.groups = group_nodes(trace.energy, trace.bands);
        trace.ego = knn_sparsify(cosine_adjacency(trace.embeddings), config.knn_alpha);
    }

    trace.routing_probs = DenseMatrix(n, 3);
    trace.routing_noise = DenseMatrix(n, 3, 0.0);
    trace.decisions.resize(n);
    const bool noisy = training && config.noise_eps > 0.0 && !structure;
    // One base draw per pass keys independent per-node streams, so node order
    // never affects the noise.
    const std::uint64_t noise_base = noisy ? rng->next_u64() : 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 3> psi;
        std::array<double, 3> eta{0.0, 0.0, 0.0};
        if (structure) {
            for (int b = 0; b < 3; ++b) eta[b] = structure->routing_noise(i, b);
            psi = routing_scores_replay(trace.embeddings.row_ptr(i), d, params.router_clean_w,
                                        params.router_clean_b, params.router_noise_w,
                                        params.router_noise_b, eta);
        } else {
            Rng node_rng(mix_seed(noise_base, i));
            psi = routing_scores(trace.embeddings.row_ptr(i), d, params.router_clean_w,
                                 params.router_clean_b, params.router_noise_w,
                                 params.router_noise_b, noisy ? config.noise_eps : 0.0, noisy,
                                 node_rng, &eta);
        }
        RoutingDecision decision = select_experts(psi, config.router_tau, i);
        if (structure) {
            // Expert set stays frozen; the probabilities still move with the
            // parameters.
            auto probs = decision.probs;
            decision = structure->decisions[i];
            decision.probs = probs;
        }
        for (int b = 0; b < 3; ++b) {
            trace.routing_probs(i, b) = decision.probs[b];
            trace.routing_noise(i, b) = eta[b];
        }
        trace.decisions[i] = decision;
    }

    if (structure) {
        trace.adjacency = structure->adjacency;
    } else {
        std::vector<EgoGraph> filtered(n);
        for (std::size_t i = 0; i < n; ++i)
            filtered[i] = filter_edges(trace.ego[i], trace.groups, trace.decisions[i]);
        std::size_t k = static_cast<std::size_t>(config.knn_alpha * static_cast<double>(n));
        if (k > n - 1) k = n - 1;
        trace.adjacency = assemble_adjacency(filtered, std::max<std::size_t>(k, 1));
    }

    trace.states.clear();
    trace.states.reserve(config.gnn_layers + 1);
    trace.states.push_back(trace.embeddings);
    NodeStates current{0, trace.embeddings};
    for (const GnnLayerParams& layer : params.gnn) {
        current = propagate_layer(current, trace.adjacency, layer);
        trace.states.push_back(current.values);
    }

    trace.node_out = matmul(current.values, params.node_proj_w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < config.patch_len; ++r)
            trace.node_out(i, r) += params.node_proj_b[r];
    trace.grid_out = project_to_time(current, params.node_proj_w, params.node_proj_b, trace.grid);

    const std::size_t t = config.horizon;
    trace.delta_gnn = matmul(trace.grid_out, transpose(params.time_proj_w));
    trace.delta_lin = matmul(trace.backbone, transpose(params.lin_path_w));
    for (std::size_t c = 0; c < config.channels; ++c)
        for (std::size_t u = 0; u < t; ++u) {
            trace.delta_gnn(c, u) += params.time_proj_b[u];
            trace.delta_lin(c, u) += params.lin_path_b[u];
        }

    trace.prediction = DenseMatrix(config.channels, t);
    for (std::size_t c = 0; c < config.channels; ++c) {
        const double gate_g = sigmoid(params.gate_gnn[c]);
        const double gate_l = sigmoid(params.gate_lin[c]);
        for (std::size_t u = 0; u < t; ++u) {
            const double corr = gate_g * trace.delta_gnn(c, u) + gate_l * trace.delta_lin(c, u);
            // A zero correction must leave the input untouched bitwise
            // (adding 0.0 would flip a -0.0 input).
            trace.prediction(c, u) =
                corr == 0.0 ? trace.backbone(c, u) : trace.backbone(c, u) + corr;
        }
    }
    return trace;
}

}  // namespace

ForwardTrace forward(const DenseMatrix& backbone_pred, const PluginParameters& params,
                     const PluginConfig& config, const SharedBasis& basis, bool training,
                     Rng& rng) {
    return run_forward(backbone_pred, params, config, basis, training, &rng, nullptr);
}

ForwardTrace forward_frozen(const DenseMatrix& backbone_pred, const PluginParameters& params,
                            const PluginConfig& config, const SharedBasis& basis,
                            const ForwardTrace& structure) {
    return run_forward(backbone_pred, params, config, basis, false, nullptr, &structure);
}

double loss_mse(const DenseMatrix& pred, const DenseMatrix& truth) {
    if (!pred.same_shape(truth)) throw DimensionError("loss_mse: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.values().size(); ++i) {
        const double diff = pred.values()[i] - truth.values()[i];
        s += diff * diff;
    }
    return s / static_cast<double>(pred.cols());
}

double loss_entropy(const DenseMatrix& routing_probs, double delta) {
    const std::size_t n = routing_probs.rows();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < 3; ++b) {
            const double r = routing_probs(i, b);
            s -= r * std::log(r + delta);
        }
    return s / static_cast<double>(n);
}

double loss_balance(const DenseMatrix& routing_probs, double delta) {
    const std::size_t n = routing_probs.rows();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mean =
            (routing_probs(i, 0) + routing_probs(i, 1) + routing_probs(i, 2)) / 3.0;
        double var = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            const double dev = routing_probs(i, b) - mean;
            var += dev * dev;
        }
        var /= 3.0;  // population convention
        s += std::sqrt(var) / (mean + delta);
    }
    return s / static_cast<double>(n);
}

double total_loss(const ForwardTrace& trace, const DenseMatrix& truth,
                  const PluginConfig& config) {
    return loss_mse(trace.prediction, truth) +
           config.mu * loss_entropy(trace.routing_probs, config.delta_stab) +
           config.beta * loss_balance(trace.routing_probs, config.delta_stab);
}

// --- checkpoint serialization -------------------------------------------

namespace {

constexpr char kMagic[8] = {'X', 'C', 'P', 'D', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_block(std::ostream& out, const double* data, std::size_t count) {
    write_u64(out, count);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

double read_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void read_block(std::istream& in, double* data, std::size_t expected) {
    const std::uint64_t count = read_u64(in);
    if (count != expected) throw IoError("checkpoint: tensor size does not match config");
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 8));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));

    const PluginConfig& c = ckpt.config;
    write_u64(out, c.channels);
    write_u64(out, c.horizon);
    write_u64(out, c.patch_len);
    write_u64(out, c.embed_dim);
    write_u64(out, c.gnn_layers);
    write_f64(out, c.knn_alpha);
    write_f64(out, c.router_tau);
    write_f64(out, c.noise_eps);
    write_f64(out, c.temperature);
    write_f64(out, c.band_tau1);
    write_f64(out, c.band_tau2);
    write_f64(out, c.mu);
    write_f64(out, c.beta);
    write_f64(out, c.delta_stab);

    const SharedBasis& b = ckpt.basis;
    write_u64(out, b.size());
    write_f64(out, b.eigengap);
    write_block(out, b.eigenvalues.data(), b.eigenvalues.size());
    write_block(out, b.basis.values().data(), b.basis.values().size());
    write_block(out, b.mean_laplacian.values().data(), b.mean_laplacian.values().size());

    std::vector<double> flat;
    flatten_params(ckpt.params, flat);
    write_block(out, flat.data(), flat.size());
    if (!out) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic or version: " + path);

    Checkpoint ckpt;
    PluginConfig& c = ckpt.config;
    c.channels = read_u64(in);
    c.horizon = read_u64(in);
    c.patch_len = read_u64(in);
    c.embed_dim = read_u64(in);
    c.gnn_layers = read_u64(in);
    c.knn_alpha = read_f64(in);
    c.router_tau = read_f64(in);
    c.noise_eps = read_f64(in);
    c.temperature = read_f64(in);
    c.band_tau1 = read_f64(in);
    c.band_tau2 = read_f64(in);
    c.mu = read_f64(in);
    c.beta = read_f64(in);
    c.delta_stab = read_f64(in);
    c.validate();

    const std::size_t n = read_u64(in);
    ckpt.basis.eigengap = read_f64(in);
    ckpt.basis.eigenvalues.resize(n);
    read_block(in, ckpt.basis.eigenvalues.data(), n);
    ckpt.basis.basis = DenseMatrix(n, n);
    read_block(in, ckpt.basis.basis.values().data(), n * n);
    ckpt.basis.mean_laplacian = DenseMatrix(n, n);
    read_block(in, ckpt.basis.mean_laplacian.values().data(), n * n);

    std::vector<double> flat(param_count(c));
    read_block(in, flat.data(), flat.size());
    if (!in) throw IoError("checkpoint: truncated file: " + path);
    unflatten_params(flat, c, ckpt.params);
    return ckpt;
}

// --- flat parameter traversal -------------------------------------------

std::size_t param_count(const PluginConfig& c) {
    const std::size_t p = c.patch_len, d = c.embed_dim, t = c.horizon;
    return p * d + d                     // embedding
           + 2 * (d * 3 + 3)             // router clean + noise
           + c.gnn_layers * (2 * d * d + d)
           + d * p + p                   // node projection
           + 2 * (t * t + t)             // time projection + linear path
           + 2 * c.channels;             // gates
}

namespace {

template <typename Fn>
void visit_tensors(PluginParameters& params, Fn&& fn) {
    fn(params.embed_w.values().data(), params.embed_w.values().size());
    fn(params.embed_b.data(), params.embed_b.size());
    fn(params.router_clean_w.values().data(), params.router_clean_w.values().size());
    fn(params.router_clean_b.data(), params.router_clean_b.size());
    fn(params.router_noise_w.values().data(), params.router_noise_w.values().size());
    fn(params.router_noise_b.data(), params.router_noise_b.size());
    for (GnnLayerParams& layer : params.gnn) {
        fn(layer.w_self.values().data(), layer.w_self.values().size());
        fn(layer.w_neigh.values().data(), layer.w_neigh.values().size());
        fn(layer.bias.data(), layer.bias.size());
    }
    fn(params.node_proj_w.values().data(), params.node_proj_w.values().size());
    fn(params.node_proj_b.data(), params.node_proj_b.size());
    fn(params.time_proj_w.values().data(), params.time_proj_w.values().size());
    fn(params.time_proj_b.data(), params.time_proj_b.size());
    fn(params.lin_path_w.values().data(), params.lin_path_w.values().size());
    fn(params.lin_path_b.data(), params.lin_path_b.size());
    fn(params.gate_gnn.data(), params.gate_gnn.size());
    fn(params.gate_lin.data(), params.gate_lin.size());
}

}  // namespace

void flatten_params(const PluginParameters& params, std::vector<double>& out) {
    out.clear();
    auto& mutable_params = const_cast<PluginParameters&>(params);
    visit_tensors(mutable_params, [&](double* data, std::size_t count) {
        out.insert(out.end(), data, data + count);
    });
}

void unflatten_params(const std::vector<double>& flat, const PluginConfig& config,
                      PluginParameters& params) {
    if (params.embed_w.rows() != config.patch_len || params.embed_w.cols() != config.embed_dim ||
        params.gnn.size() != config.gnn_layers || params.gate_gnn.size() != config.channels ||
        params.time_proj_w.rows() != config.horizon)
        params = zero_params(config);
    std::size_t offset = 0;
    visit_tensors(params, [&](double* data, std::size_t count) {
        if (offset + count > flat.size()) throw DimensionError("unflatten_params: too few values");
        std::memcpy(data, flat.data() + offset, count * sizeof(double));
        offset += count;
    });
    if (offset != flat.size()) throw DimensionError("unflatten_params: size mismatch");
}

}  // namespace xcpd
