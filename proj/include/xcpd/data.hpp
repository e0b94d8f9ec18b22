#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xcpd/linalg.hpp"

namespace xcpd {

// A multivariate series plus the split geometry and the train-only
// normalization statistics. Splits are contiguous train -> val -> test.
struct SeriesDataset {
    DenseMatrix values;  // channels x total length
    std::vector<std::string> channel_names;
    std::string sampling;  // "hourly", "synthetic", ...
    double train_frac = 0.7;
    double val_frac = 0.1;
    std::vector<double> train_mean;  // per channel, filled by normalize()
    std::vector<double> train_std;
    bool normalized = false;

    std::size_t channels() const { return values.rows(); }
    std::size_t length() const { return values.cols(); }
    std::size_t train_len() const { return static_cast<std::size_t>(train_frac * length()); }
    std::size_t val_len() const { return static_cast<std::size_t>(val_frac * length()); }
    std::size_t test_len() const { return length() - train_len() - val_len(); }

    // Standardizes every channel with mean/std computed on the train region
    // only. Constant channels keep std 1.
    void normalize();
};

// Parameters of the synthetic generator: a low-frequency sinusoid family
// shared by all channels (per-channel phase), mid-frequency sinusoids shared
// by one designated channel pair, and independent noise. The mid sinusoids
// carry a random-walk phase drift, so they cannot be extrapolated exactly
// from any one channel's past; and the paired channel `pair_a` is observed
// under much heavier noise than everyone else, so its mid-band state is
// recoverable far better through its clean partner.
struct SynthSpec {
    std::size_t channels = 8;
    std::size_t length = 8000;
    std::vector<double> low_periods = {240.0, 168.0};
    double low_amp = 1.0;
    std::vector<double> mid_periods = {24.0, 16.0};
    double mid_amp = 1.0;
    double mid_drift = 0.05;  // phase random-walk step, radians per sample
    std::size_t pair_a = 0;
    std::size_t pair_b = 1;
    double noise_base = 0.1;
    double noise_pair_a = 1.0;

    void validate() const;
};

SeriesDataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

// ETT-layout CSV: optional leading timestamp column, one column per channel,
// header row with names. Missing or non-numeric cells are rejected with the
// offending row and column.
SeriesDataset load_csv(const std::string& path, bool date_column);

void write_csv(const std::string& path, const SeriesDataset& ds, bool date_column);

enum class Split { Train, Val, Test };

struct Window {
    DenseMatrix lookback;  // C x T
    DenseMatrix target;    // C x T'
    std::size_t target_start = 0;  // absolute index of the first target step
};

// Sliding windows fully contained in one split; never crosses a boundary.
std::vector<Window> windowize(const SeriesDataset& ds, Split split, std::size_t lookback,
                              std::size_t horizon, std::size_t stride);

// Persistence forecast: repeats the final lookback value per channel.
DenseMatrix backbone_naive(const DenseMatrix& lookback, std::size_t horizon);

// Frozen per-channel linear forecaster fit in closed form with a ridge
// penalty; the plugin's stand-in backbone.
struct RidgeBackbone {
    std::size_t lookback = 0;
    std::size_t horizon = 0;
    std::vector<DenseMatrix> coef;        // per channel, T x T'
    std::vector<std::vector<double>> intercept;  // per channel, T'

    DenseMatrix predict(const DenseMatrix& lookback_window) const;
};

RidgeBackbone backbone_ridge(const std::vector<Window>& train_windows, double lambda);

struct MetricsReport {
    double mae = 0.0;
    double mse = 0.0;
    double smape = 0.0;
    double mase = 0.0;
    double owa = 0.0;
    std::size_t seasonality = 1;
    bool mase_defined = true;
    bool owa_defined = true;
};

// Error metrics over a set of prediction/truth windows. SMAPE terms with a
// zero denominator contribute zero. MASE scales by the mean seasonal
// difference of the in-sample series; a constant in-sample makes it
// undefined rather than infinite. OWA needs the seasonal-naive reference
// predictions.
MetricsReport metrics(const std::vector<DenseMatrix>& preds,
                      const std::vector<DenseMatrix>& truths, const DenseMatrix& insample,
                      std::size_t seasonality,
                      const std::vector<DenseMatrix>* naive2_preds = nullptr);

// Seasonal-naive forecast with period s from the tail of the lookback; the
// self-contained stand-in for the Naive2 reference inside OWA.
DenseMatrix seasonal_naive(const DenseMatrix& lookback, std::size_t horizon,
                           std::size_t seasonality);

}  // namespace xcpd
