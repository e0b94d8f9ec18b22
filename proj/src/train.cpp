#include "xcpd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xcpd/errors.hpp"

namespace xcpd {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double backward_accumulate(const ForwardTrace& trace, const DenseMatrix& truth,
                           const PluginParameters& params, const PluginConfig& config,
                           std::vector<double>& grads) {
    const std::size_t channels = config.channels;
    const std::size_t horizon = config.horizon;
    const std::size_t n = trace.embeddings.rows();
    const std::size_t d = config.embed_dim;
    const std::size_t plen = config.patch_len;
    if (grads.size() != param_count(config))
        throw DimensionError("backward: gradient buffer size mismatch");

    const double mse = loss_mse(trace.prediction, truth);
    const double ent = loss_entropy(trace.routing_probs, config.delta_stab);
    const double bal = loss_balance(trace.routing_probs, config.delta_stab);
    const double total = mse + config.mu * ent + config.beta * bal;

    PluginParameters g = zero_params(config);

    // d(mse)/d(prediction), time-averaged channel-summed convention.
    DenseMatrix dpred(channels, horizon);
    const double inv_t = 1.0 / static_cast<double>(horizon);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < horizon; ++t)
            dpred(c, t) = 2.0 * inv_t * (trace.prediction(c, t) - truth(c, t));

    // Gates and the two correction paths.
    DenseMatrix d_delta_gnn(channels, horizon);
    DenseMatrix d_delta_lin(channels, horizon);
    for (std::size_t c = 0; c < channels; ++c) {
        const double sg = sigmoid(params.gate_gnn[c]);
        const double sl = sigmoid(params.gate_lin[c]);
        double acc_g = 0.0, acc_l = 0.0;
        for (std::size_t t = 0; t < horizon; ++t) {
            d_delta_gnn(c, t) = dpred(c, t) * sg;
            d_delta_lin(c, t) = dpred(c, t) * sl;
            acc_g += dpred(c, t) * trace.delta_gnn(c, t);
            acc_l += dpred(c, t) * trace.delta_lin(c, t);
        }
        g.gate_gnn[c] = acc_g * sg * (1.0 - sg);
        g.gate_lin[c] = acc_l * sl * (1.0 - sl);
    }

    // Time projection  delta_gnn = G W_p^T + b_p  and the linear path
    // delta_lin = Y W_l^T + b_l.
    g.time_proj_w = matmul(transpose(d_delta_gnn), trace.grid_out);
    g.lin_path_w = matmul(transpose(d_delta_lin), trace.backbone);
    for (std::size_t t = 0; t < horizon; ++t) {
        double sg = 0.0, sl = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            sg += d_delta_gnn(c, t);
            sl += d_delta_lin(c, t);
        }
        g.time_proj_b[t] = sg;
        g.lin_path_b[t] = sl;
    }
    const DenseMatrix dgrid = matmul(d_delta_gnn, params.time_proj_w);

    // Grid slots back to per-node projected outputs; padded tail drops out.
    DenseMatrix dnode(n, plen, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = trace.grid.node_channel(i);
        const std::size_t p = trace.grid.node_patch(i);
        for (std::size_t r = 0; r < plen; ++r) {
            const std::size_t t = p * plen + r;
            if (t < horizon) dnode(i, r) = dgrid(c, t);
        }
    }

    const DenseMatrix& h_final = trace.states.back();
    g.node_proj_w = matmul(transpose(h_final), dnode);
    for (std::size_t r = 0; r < plen; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += dnode(i, r);
        g.node_proj_b[r] = s;
    }
    DenseMatrix dh = matmul(dnode, transpose(params.node_proj_w));  // n x d

    // Message-passing layers, last to first. Aggregation weights are
    // constants of the recorded pass.
    for (std::size_t layer = config.gnn_layers; layer-- > 0;) {
        const DenseMatrix& h_prev = trace.states[layer];
        const DenseMatrix& h_out = trace.states[layer + 1];
        const DenseMatrix messages = neighbor_messages(h_prev, trace.adjacency);

        DenseMatrix dz = dh;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c)
                if (h_out(i, c) <= 0.0) dz(i, c) = 0.0;

        g.gnn[layer].w_self = matmul(transpose(h_prev), dz);
        g.gnn[layer].w_neigh = matmul(transpose(messages), dz);
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += dz(i, c);
            g.gnn[layer].bias[c] = s;
        }

        DenseMatrix dh_prev = matmul(dz, transpose(params.gnn[layer].w_self));
        const DenseMatrix dmsg = matmul(dz, transpose(params.gnn[layer].w_neigh));
        for (std::size_t i = 0; i < n; ++i) {
            double total_w = 0.0;
            for (const auto& [j, sim] : trace.adjacency.rows[i])
                total_w += aggregation_weight(sim);
            if (total_w <= 0.0) continue;
            for (const auto& [j, sim] : trace.adjacency.rows[i]) {
                const double a = aggregation_weight(sim) / total_w;
                for (std::size_t c = 0; c < d; ++c) dh_prev(j, c) += a * dmsg(i, c);
            }
        }
        dh = std::move(dh_prev);
    }

    DenseMatrix demb = std::move(dh);  // gradient into the embeddings so far

    // Routing regularizers: entropy and balance act on the softmax rows; the
    // expert sets themselves are frozen and carry nothing.
    const double inv_n = 1.0 / static_cast<double>(n);
    const double delta = config.delta_stab;
    for (std::size_t i = 0; i < n; ++i) {
        double r[3];
        for (int b = 0; b < 3; ++b) r[b] = trace.routing_probs(i, b);

        double d_r[3];
        for (int b = 0; b < 3; ++b)
            d_r[b] = -config.mu * inv_n * (std::log(r[b] + delta) + r[b] / (r[b] + delta));

        const double mean = (r[0] + r[1] + r[2]) / 3.0;
        double var = 0.0;
        for (int b = 0; b < 3; ++b) var += (r[b] - mean) * (r[b] - mean);
        var /= 3.0;
        const double sd = std::sqrt(var);
        if (sd > 1e-15) {
            const double denom = mean + delta;
            for (int b = 0; b < 3; ++b) {
                const double d_term =
                    ((r[b] - mean) / (3.0 * sd)) / denom - sd / (denom * denom) / 3.0;
                d_r[b] += config.beta * inv_n * d_term;
            }
        }

        const double dot = d_r[0] * r[0] + d_r[1] * r[1] + d_r[2] * r[2];
        double dpsi[3];
        for (int b = 0; b < 3; ++b) dpsi[b] = r[b] * (d_r[b] - dot);

        const double* x = trace.embeddings.row_ptr(i);
        double* demb_row = demb.row_ptr(i);
        for (int b = 0; b < 3; ++b) {
            g.router_clean_b[b] += dpsi[b];
            for (std::size_t k = 0; k < d; ++k) {
                g.router_clean_w(k, b) += x[k] * dpsi[b];
                demb_row[k] += params.router_clean_w(k, b) * dpsi[b];
            }
            const double eta = trace.routing_noise(i, b);
            if (eta != 0.0) {
                double u = params.router_noise_b[b];
                for (std::size_t k = 0; k < d; ++k) u += params.router_noise_w(k, b) * x[k];
                const double du = dpsi[b] * eta * sigmoid(u);
                g.router_noise_b[b] += du;
                for (std::size_t k = 0; k < d; ++k) {
                    g.router_noise_w(k, b) += x[k] * du;
                    demb_row[k] += params.router_noise_w(k, b) * du;
                }
            }
        }
    }

    // Embedding layer closes the chain; patches are constants of the input.
    g.embed_w = matmul(transpose(trace.patches), demb);
    for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += demb(i, c);
        g.embed_b[c] = s;
    }

    std::vector<double> flat;
    flatten_params(g, flat);
    for (std::size_t i = 0; i < flat.size(); ++i) grads[i] += flat[i];
    return total;
}

double backward(const ForwardTrace& trace, const DenseMatrix& truth,
                const PluginParameters& params, const PluginConfig& config, GradientTape& tape) {
    if (tape.filled())
        throw UsageError("backward: tape already holds gradients; reset it first");
    const double loss = backward_accumulate(trace, truth, params, config, tape.mutable_grads());
    tape.mark_filled();
    return loss;
}

AdamState make_adam_state(std::size_t dim, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.assign(dim, 0.0);
    s.v.assign(dim, 0.0);
    return s;
}

void adam_step(std::vector<double>& params_flat, const std::vector<double>& grads,
               AdamState& state) {
    if (params_flat.size() != grads.size() || params_flat.size() != state.m.size())
        throw DimensionError("adam_step: size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params_flat.size(); ++i) {
        const double gi = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gi;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gi * gi;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params_flat[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

namespace {

double validation_mse(const std::vector<WindowPair>& pairs, const PluginParameters& params,
                      const PluginConfig& config, const SharedBasis& basis) {
    double s = 0.0;
    Rng eval_rng(0);  // noise is off at evaluation, the generator is unused
    for (const WindowPair& pair : pairs) {
        const ForwardTrace trace =
            forward(pair.prediction, params, config, basis, /*training=*/false, eval_rng);
        s += loss_mse(trace.prediction, pair.truth);
    }
    return s / static_cast<double>(pairs.size());
}

}  // namespace

TrainResult train(const PairDataset& dataset, const PluginConfig& config,
                  const TrainOptions& options, const SharedBasis& basis) {
    if (dataset.train.empty()) throw ConfigError("train: training dataset is empty");
    // Validation falls back to the training pairs when no split is given.
    const std::vector<WindowPair>& val = dataset.val.empty() ? dataset.train : dataset.val;

    Rng rng(options.seed);
    PluginParameters params = init_params(config, rng);

    TrainResult result;
    result.report.seed = options.seed;
    result.report.identity_val_mse = validation_mse(val, params, config, basis);
    result.report.best_epoch = 0;
    result.report.best_val_mse = result.report.identity_val_mse;
    result.best_params = params;

    const std::size_t dim = param_count(config);
    AdamState adam = make_adam_state(dim, options.lr);
    std::vector<double> flat;
    flatten_params(params, flat);
    std::vector<double> grads(dim, 0.0);

    std::vector<std::size_t> order(dataset.train.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    std::size_t epochs_since_best = 0;

    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        // Deterministic Fisher-Yates reshuffle per epoch.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = rng.next_u64() % i;
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        std::array<double, 3> count_hist{0.0, 0.0, 0.0};
        std::array<double, 3> band_hist{0.0, 0.0, 0.0};
        double nodes_seen = 0.0, selections = 0.0;

        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            std::fill(grads.begin(), grads.end(), 0.0);
            for (std::size_t w = start; w < stop; ++w) {
                const WindowPair& pair = dataset.train[order[w]];
                const ForwardTrace trace =
                    forward(pair.prediction, params, config, basis, /*training=*/true, rng);
                loss_sum += backward_accumulate(trace, pair.truth, params, config, grads);
                for (const RoutingDecision& decision : trace.decisions) {
                    count_hist[decision.expert_count - 1] += 1.0;
                    nodes_seen += 1.0;
                    for (int b = 0; b < 3; ++b)
                        if (decision.experts[b]) {
                            band_hist[b] += 1.0;
                            selections += 1.0;
                        }
                }
            }
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            for (double& gv : grads) gv *= inv_batch;
            adam_step(flat, grads, adam);
            unflatten_params(flat, config, params);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.val_mse = validation_mse(val, params, config, basis);
        for (int b = 0; b < 3; ++b) {
            stats.expert_count_hist[b] = nodes_seen > 0 ? count_hist[b] / nodes_seen : 0.0;
            stats.band_hist[b] = selections > 0 ? band_hist[b] / selections : 0.0;
        }
        result.report.epochs.push_back(stats);

        if (stats.val_mse < result.report.best_val_mse - 1e-12) {
            result.report.best_val_mse = stats.val_mse;
            result.report.best_epoch = epoch;
            result.best_params = params;
            epochs_since_best = 0;
        } else if (++epochs_since_best >= options.patience) {
            break;
        }
    }
    return result;
}

void randomize_params(PluginParameters& params, const PluginConfig& config, Rng& rng) {
    std::vector<double> flat(param_count(config));
    for (double& v : flat) v = rng.uniform(-0.5, 0.5);
    unflatten_params(flat, config, params);
}

GradCheckReport grad_check(const PluginConfig& config, std::uint64_t seed, double fd_step) {
    if (config.node_count() > 24 || config.embed_dim > 4 || config.gnn_layers > 2)
        throw ConfigError("grad_check: intended for tiny configurations only");

    Rng rng(seed);
    PluginParameters params = init_params(config, rng);
    randomize_params(params, config, rng);

    DenseMatrix pred(config.channels, config.horizon);
    DenseMatrix truth(config.channels, config.horizon);
    for (double& v : pred.values()) v = rng.uniform(-1.0, 1.0);
    for (double& v : truth.values()) v = rng.uniform(-1.0, 1.0);

    const PatchResult pr = patch(pred, config.patch_len);
    const DenseMatrix emb = embed(pr.patches, params.embed_w, params.embed_b);
    const LaplacianMatrix lap = normalized_laplacian(nonneg_shift(cosine_adjacency(emb)));
    const SharedBasis basis = fit_shared_basis({lap});

    const ForwardTrace trace = forward(pred, params, config, basis, /*training=*/true, rng);
    GradientTape tape(config);
    backward(trace, truth, params, config, tape);
    const std::vector<double>& analytic = tape.grads();

    std::vector<double> flat;
    flatten_params(params, flat);
    GradCheckReport report;
    PluginParameters perturbed = params;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double original = flat[i];
        flat[i] = original + fd_step;
        unflatten_params(flat, config, perturbed);
        const double plus =
            total_loss(forward_frozen(pred, perturbed, config, basis, trace), truth, config);
        flat[i] = original - fd_step;
        unflatten_params(flat, config, perturbed);
        const double minus =
            total_loss(forward_frozen(pred, perturbed, config, basis, trace), truth, config);
        flat[i] = original;

        const double numeric = (plus - minus) / (2.0 * fd_step);
        if (std::fabs(numeric) < 1e-8 && std::fabs(analytic[i]) < 1e-8) continue;
        const double rel = std::fabs(numeric - analytic[i]) /
                           std::max(std::fabs(numeric), std::fabs(analytic[i]));
        ++report.coords_checked;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_coord = i;
        }
    }
    return report;
}

}  // namespace xcpd
