#include "xcpd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "xcpd/errors.hpp"
#include "xcpd/rng.hpp"

namespace xcpd {

namespace {

// Compensated summation keeps metric aggregation order-insensitive in fixed
// precision.
struct KahanSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double x) {
        const double y = x - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
};

}  // namespace

void SeriesDataset::normalize() {
    const std::size_t t_train = train_len();
    if (t_train == 0) throw ConfigError("normalize: empty training region");
    train_mean.assign(channels(), 0.0);
    train_std.assign(channels(), 1.0);
    for (std::size_t c = 0; c < channels(); ++c) {
        KahanSum mean_acc;
        for (std::size_t t = 0; t < t_train; ++t) mean_acc.add(values(c, t));
        const double mean = mean_acc.sum / static_cast<double>(t_train);
        KahanSum var_acc;
        for (std::size_t t = 0; t < t_train; ++t) {
            const double dev = values(c, t) - mean;
            var_acc.add(dev * dev);
        }
        double sd = std::sqrt(var_acc.sum / static_cast<double>(t_train));
        if (sd < 1e-12) sd = 1.0;
        train_mean[c] = mean;
        train_std[c] = sd;
        for (std::size_t t = 0; t < length(); ++t) values(c, t) = (values(c, t) - mean) / sd;
    }
    normalized = true;
}

void SynthSpec::validate() const {
    if (channels < 2) throw ConfigError("synth: at least two channels required");
    if (length < 2000) throw ConfigError("synth: length must be at least 2000");
    if (pair_a >= channels || pair_b >= channels || pair_a == pair_b)
        throw ConfigError("synth: invalid planted pair");
    if (low_periods.empty() && mid_periods.empty())
        throw ConfigError("synth: at least one sinusoid family required");
    if (noise_base < 0.0 || noise_pair_a < 0.0)
        throw ConfigError("synth: noise amplitudes must be nonnegative");
}

SeriesDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const double two_pi = 2.0 * std::numbers::pi;

    // Draws happen in a fixed order so the full dataset is a pure function
    // of the seed: low phases, then the shared mid paths, then noise.
    std::vector<std::vector<double>> low_phase(spec.channels);
    for (std::size_t c = 0; c < spec.channels; ++c)
        for (std::size_t k = 0; k < spec.low_periods.size(); ++k)
            low_phase[c].push_back(rng.uniform(0.0, two_pi));

    // One shared mid-band path per period: a sinusoid whose phase performs a
    // random walk. Both planted channels see the identical path.
    std::vector<double> mid_path(spec.length, 0.0);
    for (std::size_t k = 0; k < spec.mid_periods.size(); ++k) {
        double phase = rng.uniform(0.0, two_pi);
        for (std::size_t t = 0; t < spec.length; ++t) {
            phase += spec.mid_drift * rng.normal();
            mid_path[t] += spec.mid_amp *
                           std::sin(two_pi * static_cast<double>(t) / spec.mid_periods[k] + phase);
        }
    }

    SeriesDataset ds;
    ds.values = DenseMatrix(spec.channels, spec.length);
    ds.sampling = "synthetic";
    for (std::size_t c = 0; c < spec.channels; ++c) {
        ds.channel_names.push_back("ch" + std::to_string(c));
        const bool planted = c == spec.pair_a || c == spec.pair_b;
        const double sigma = c == spec.pair_a ? spec.noise_pair_a : spec.noise_base;
        for (std::size_t t = 0; t < spec.length; ++t) {
            double v = 0.0;
            for (std::size_t k = 0; k < spec.low_periods.size(); ++k)
                v += spec.low_amp *
                     std::sin(two_pi * static_cast<double>(t) / spec.low_periods[k] +
                              low_phase[c][k]);
            if (planted) v += mid_path[t];
            if (sigma > 0.0) v += sigma * rng.normal();
            ds.values(c, t) = v;
        }
    }
    return ds;
}

SeriesDataset load_csv(const std::string& path, bool date_column) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open: " + path);

    SeriesDataset ds;
    std::string line;
    if (!std::getline(in, line)) throw IngestError("load_csv: empty file: " + path);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.empty()) throw IngestError("load_csv: empty header: " + path);
    const std::size_t first = date_column ? 1 : 0;
    if (header.size() <= first) throw IngestError("load_csv: no channel columns: " + path);
    for (std::size_t i = first; i < header.size(); ++i) ds.channel_names.push_back(header[i]);
    const std::size_t channels = ds.channel_names.size();

    std::vector<std::vector<double>> columns(channels);
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        std::size_t chan = 0;
        while (std::getline(ss, cell, ',')) {
            if (col >= first) {
                if (chan >= channels)
                    throw IngestError("load_csv: extra column at row " + std::to_string(row));
                if (cell.empty())
                    throw IngestError("load_csv: blank cell at row " + std::to_string(row) +
                                      ", column " + std::to_string(col + 1));
                std::size_t consumed = 0;
                double v = 0.0;
                try {
                    v = std::stod(cell, &consumed);
                } catch (const std::exception&) {
                    throw IngestError("load_csv: bad number at row " + std::to_string(row) +
                                      ", column " + std::to_string(col + 1));
                }
                if (consumed != cell.size())
                    throw IngestError("load_csv: bad number at row " + std::to_string(row) +
                                      ", column " + std::to_string(col + 1));
                columns[chan++].push_back(v);
            }
            ++col;
        }
        if (chan != channels)
            throw IngestError("load_csv: ragged row " + std::to_string(row) + " (expected " +
                              std::to_string(channels + first) + " columns)");
    }
    if (columns[0].empty()) throw IngestError("load_csv: no data rows: " + path);

    ds.values = DenseMatrix(channels, columns[0].size());
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < columns[c].size(); ++t) ds.values(c, t) = columns[c][t];
    return ds;
}

void write_csv(const std::string& path, const SeriesDataset& ds, bool date_column) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_csv: cannot open for writing: " + path);
    if (date_column) out << "date";
    for (std::size_t c = 0; c < ds.channels(); ++c) {
        if (date_column || c > 0) out << ',';
        out << ds.channel_names[c];
    }
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < ds.length(); ++t) {
        if (date_column) out << t;
        for (std::size_t c = 0; c < ds.channels(); ++c) {
            if (date_column || c > 0) out << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", ds.values(c, t));
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write_csv: write failed: " + path);
}

std::vector<Window> windowize(const SeriesDataset& ds, Split split, std::size_t lookback,
                              std::size_t horizon, std::size_t stride) {
    if (lookback == 0 || horizon == 0 || stride == 0)
        throw ConfigError("windowize: lookback, horizon and stride must be positive");
    std::size_t begin = 0, end = 0;
    switch (split) {
        case Split::Train: begin = 0; end = ds.train_len(); break;
        case Split::Val: begin = ds.train_len(); end = ds.train_len() + ds.val_len(); break;
        case Split::Test: begin = ds.train_len() + ds.val_len(); end = ds.length(); break;
    }
    const std::size_t span = lookback + horizon;
    if (end - begin < span) throw ConfigError("windowize: split shorter than lookback + horizon");

    std::vector<Window> out;
    for (std::size_t start = begin; start + span <= end; start += stride) {
        Window w;
        w.lookback = DenseMatrix(ds.channels(), lookback);
        w.target = DenseMatrix(ds.channels(), horizon);
        w.target_start = start + lookback;
        for (std::size_t c = 0; c < ds.channels(); ++c) {
            for (std::size_t t = 0; t < lookback; ++t) w.lookback(c, t) = ds.values(c, start + t);
            for (std::size_t t = 0; t < horizon; ++t)
                w.target(c, t) = ds.values(c, start + lookback + t);
        }
        out.push_back(std::move(w));
    }
    return out;
}

DenseMatrix backbone_naive(const DenseMatrix& lookback, std::size_t horizon) {
    if (lookback.cols() == 0) throw ConfigError("backbone_naive: empty lookback");
    DenseMatrix out(lookback.rows(), horizon);
    for (std::size_t c = 0; c < lookback.rows(); ++c) {
        const double last = lookback(c, lookback.cols() - 1);
        for (std::size_t t = 0; t < horizon; ++t) out(c, t) = last;
    }
    return out;
}

namespace {

// Cholesky solve for the symmetric positive definite ridge system.
DenseMatrix cholesky_solve(DenseMatrix a, DenseMatrix rhs) {
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            const double ljk = a(j, k);
            for (std::size_t i = j; i < n; ++i) a(i, j) -= a(i, k) * ljk;
        }
        if (a(j, j) <= 0.0) throw ConvergenceError("cholesky: matrix not positive definite");
        const double root = std::sqrt(a(j, j));
        for (std::size_t i = j; i < n; ++i) a(i, j) /= root;
    }
    // Forward then backward substitution per right-hand column.
    for (std::size_t col = 0; col < rhs.cols(); ++col) {
        for (std::size_t i = 0; i < n; ++i) {
            double v = rhs(i, col);
            for (std::size_t k = 0; k < i; ++k) v -= a(i, k) * rhs(k, col);
            rhs(i, col) = v / a(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            double v = rhs(i, col);
            for (std::size_t k = i + 1; k < n; ++k) v -= a(k, i) * rhs(k, col);
            rhs(i, col) = v / a(i, i);
        }
    }
    return rhs;
}

}  // namespace

RidgeBackbone backbone_ridge(const std::vector<Window>& train_windows, double lambda) {
    if (train_windows.empty()) throw ConfigError("backbone_ridge: no training windows");
    if (lambda <= 0.0) throw ConfigError("backbone_ridge: lambda must be positive");
    const std::size_t channels = train_windows.front().lookback.rows();
    const std::size_t t_in = train_windows.front().lookback.cols();
    const std::size_t t_out = train_windows.front().target.cols();
    const std::size_t count = train_windows.size();
    if (count < t_in) throw ConfigError("backbone_ridge: need at least lookback-many windows");

    RidgeBackbone model;
    model.lookback = t_in;
    model.horizon = t_out;
    model.coef.resize(channels);
    model.intercept.resize(channels);

    DenseMatrix x(count, t_in), y(count, t_out);
    for (std::size_t c = 0; c < channels; ++c) {
        std::vector<double> x_mean(t_in, 0.0), y_mean(t_out, 0.0);
        for (std::size_t w = 0; w < count; ++w) {
            for (std::size_t t = 0; t < t_in; ++t) {
                x(w, t) = train_windows[w].lookback(c, t);
                x_mean[t] += x(w, t);
            }
            for (std::size_t t = 0; t < t_out; ++t) {
                y(w, t) = train_windows[w].target(c, t);
                y_mean[t] += y(w, t);
            }
        }
        for (double& v : x_mean) v /= static_cast<double>(count);
        for (double& v : y_mean) v /= static_cast<double>(count);
        for (std::size_t w = 0; w < count; ++w) {
            for (std::size_t t = 0; t < t_in; ++t) x(w, t) -= x_mean[t];
            for (std::size_t t = 0; t < t_out; ++t) y(w, t) -= y_mean[t];
        }

        DenseMatrix gram = matmul(transpose(x), x);
        for (std::size_t t = 0; t < t_in; ++t) gram(t, t) += lambda;
        model.coef[c] = cholesky_solve(std::move(gram), matmul(transpose(x), y));

        model.intercept[c].assign(t_out, 0.0);
        for (std::size_t t = 0; t < t_out; ++t) {
            double v = y_mean[t];
            for (std::size_t k = 0; k < t_in; ++k) v -= x_mean[k] * model.coef[c](k, t);
            model.intercept[c][t] = v;
        }
    }
    return model;
}

DenseMatrix RidgeBackbone::predict(const DenseMatrix& lookback_window) const {
    if (lookback_window.cols() != lookback || lookback_window.rows() != coef.size())
        throw DimensionError("ridge predict: lookback shape differs from the fitted model");
    DenseMatrix out(lookback_window.rows(), horizon);
    for (std::size_t c = 0; c < lookback_window.rows(); ++c)
        for (std::size_t t = 0; t < horizon; ++t) {
            double v = intercept[c][t];
            for (std::size_t k = 0; k < lookback; ++k)
                v += lookback_window(c, k) * coef[c](k, t);
            out(c, t) = v;
        }
    return out;
}

DenseMatrix seasonal_naive(const DenseMatrix& lookback, std::size_t horizon,
                           std::size_t seasonality) {
    if (seasonality == 0) throw ConfigError("seasonal_naive: seasonality must be at least 1");
    const std::size_t t_in = lookback.cols();
    DenseMatrix out(lookback.rows(), horizon);
    for (std::size_t c = 0; c < lookback.rows(); ++c)
        for (std::size_t h = 0; h < horizon; ++h) {
            if (t_in >= seasonality)
                out(c, h) = lookback(c, t_in - seasonality + (h % seasonality));
            else
                out(c, h) = lookback(c, t_in - 1);  // series shorter than one season
        }
    return out;
}

namespace {

struct PairErrors {
    double mae = 0.0;
    double smape = 0.0;
};

PairErrors pooled_errors(const std::vector<DenseMatrix>& preds,
                         const std::vector<DenseMatrix>& truths, KahanSum* mse_acc) {
    KahanSum mae_acc, smape_acc;
    std::size_t count = 0;
    for (std::size_t w = 0; w < preds.size(); ++w) {
        const DenseMatrix& p = preds[w];
        const DenseMatrix& t = truths[w];
        if (!p.same_shape(t)) throw DimensionError("metrics: prediction/truth shape mismatch");
        for (std::size_t i = 0; i < p.values().size(); ++i) {
            const double err = t.values()[i] - p.values()[i];
            mae_acc.add(std::fabs(err));
            if (mse_acc) mse_acc->add(err * err);
            const double denom = std::fabs(t.values()[i]) + std::fabs(p.values()[i]);
            if (denom > 0.0) smape_acc.add(std::fabs(err) / denom);
            ++count;
        }
    }
    PairErrors out;
    if (count > 0) {
        out.mae = mae_acc.sum / static_cast<double>(count);
        out.smape = 200.0 * smape_acc.sum / static_cast<double>(count);
    }
    return out;
}

double seasonal_diff_mean(const DenseMatrix& insample, std::size_t s) {
    if (insample.cols() <= s) return 0.0;
    KahanSum acc;
    std::size_t count = 0;
    for (std::size_t c = 0; c < insample.rows(); ++c)
        for (std::size_t t = s; t < insample.cols(); ++t) {
            acc.add(std::fabs(insample(c, t) - insample(c, t - s)));
            ++count;
        }
    return count > 0 ? acc.sum / static_cast<double>(count) : 0.0;
}

}  // namespace

MetricsReport metrics(const std::vector<DenseMatrix>& preds,
                      const std::vector<DenseMatrix>& truths, const DenseMatrix& insample,
                      std::size_t seasonality, const std::vector<DenseMatrix>* naive2_preds) {
    if (preds.size() != truths.size() || preds.empty())
        throw DimensionError("metrics: need matching, non-empty prediction and truth sets");
    if (seasonality == 0) throw ConfigError("metrics: seasonality must be at least 1");

    MetricsReport report;
    report.seasonality = seasonality;

    KahanSum mse_acc;
    const PairErrors own = pooled_errors(preds, truths, &mse_acc);
    std::size_t count = 0;
    for (const DenseMatrix& p : preds) count += p.values().size();
    report.mae = own.mae;
    report.mse = mse_acc.sum / static_cast<double>(count);
    report.smape = own.smape;

    const double scale = seasonal_diff_mean(insample, seasonality);
    if (scale > 0.0) {
        report.mase = own.mae / scale;
    } else {
        report.mase_defined = false;
        report.mase = 0.0;
    }

    report.owa_defined = false;
    if (naive2_preds) {
        const PairErrors ref = pooled_errors(*naive2_preds, truths, nullptr);
        const double ref_mase = scale > 0.0 ? ref.mae / scale : 0.0;
        if (ref.smape > 0.0 && ref_mase > 0.0 && report.mase_defined) {
            report.owa = 0.5 * (report.smape / ref.smape + report.mase / ref_mase);
            report.owa_defined = true;
        } else if (report.smape == 0.0 && report.mae == 0.0) {
            report.owa = 0.0;  // exact predictions
            report.owa_defined = true;
        }
    }
    return report;
}

}  // namespace xcpd
