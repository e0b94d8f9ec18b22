#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "xcpd/model.hpp"

namespace xcpd {

// Accumulates the gradient of the training objective with respect to every
// parameter, in the flat traversal order of flatten_params. Discrete
// structure recorded in the trace (groups, ego topology, expert sets) is
// treated as constant and receives no gradient.
class GradientTape {
  public:
    explicit GradientTape(const PluginConfig& config)
        : grads_(param_count(config), 0.0) {}

    void reset() {
        std::fill(grads_.begin(), grads_.end(), 0.0);
        filled_ = false;
    }

    bool filled() const { return filled_; }
    const std::vector<double>& grads() const { return grads_; }
    std::vector<double>& mutable_grads() { return grads_; }
    void mark_filled() { filled_ = true; }

  private:
    std::vector<double> grads_;
    bool filled_ = false;
};

// Reverse pass over a recorded trace. Adds the gradients of
// total_loss(trace, truth, config) into the tape. Throws UsageError when the
// tape already holds gradients (reset it between windows, or accumulate via
// backward_accumulate).
double backward(const ForwardTrace& trace, const DenseMatrix& truth,
                const PluginParameters& params, const PluginConfig& config, GradientTape& tape);

// Accumulating variant used for minibatch sums; does not toggle the filled
// flag.
double backward_accumulate(const ForwardTrace& trace, const DenseMatrix& truth,
                           const PluginParameters& params, const PluginConfig& config,
                           std::vector<double>& grads);

struct AdamState {
    std::size_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
};

AdamState make_adam_state(std::size_t dim, double lr);

// Standard bias-corrected update, in place over the flat parameter vector.
void adam_step(std::vector<double>& params_flat, const std::vector<double>& grads,
               AdamState& state);

struct WindowPair {
    DenseMatrix prediction;  // frozen backbone output, C x T'
    DenseMatrix truth;       // C x T'
};

struct PairDataset {
    std::vector<WindowPair> train;
    std::vector<WindowPair> val;
};

struct TrainOptions {
    double lr = 1e-4;
    std::size_t epochs = 10;
    std::size_t patience = 3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mse = 0.0;
    std::array<double, 3> expert_count_hist{};  // fraction of nodes with s = 1, 2, 3
    std::array<double, 3> band_hist{};          // share of selections per band
};

struct TrainReport {
    std::uint64_t seed = 0;
    double identity_val_mse = 0.0;  // epoch-0 evaluation of the untouched plugin
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;     // 0 = identity checkpoint
    double best_val_mse = 0.0;
};

struct TrainResult {
    TrainReport report;
    PluginParameters best_params;
};

// Full optimization loop: noisy forwards on the training pairs, noise-free
// validation each epoch, early stopping on validation MSE, and the best
// checkpoint returned. The identity plugin (epoch 0) is always a candidate,
// so the returned parameters never validate worse than the backbone alone.
TrainResult train(const PairDataset& dataset, const PluginConfig& config,
                  const TrainOptions& options, const SharedBasis& basis);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_coord = 0;
};

// Central finite-difference audit of the analytic gradients at a small,
// randomized model. Differences are evaluated with the discrete structure
// refrozen from the unperturbed pass, matching what backward differentiates.
GradCheckReport grad_check(const PluginConfig& config, std::uint64_t seed, double fd_step = 1e-4);

// Fills every parameter tensor with uniform(-0.5, 0.5) draws; exercises all
// gradient paths in tests and verification.
void randomize_params(PluginParameters& params, const PluginConfig& config, Rng& rng);

}  // namespace xcpd
