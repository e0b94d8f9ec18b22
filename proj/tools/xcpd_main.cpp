// Command-line front end: synth, train, eval, inspect-spectrum, verify.
// Every command is a pure function of (config file, flags, seed) to disk
// artifacts; timing goes to stderr so reruns rewrite identical bytes.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "xcpd/data.hpp"
#include "xcpd/errors.hpp"
#include "xcpd/model.hpp"
#include "xcpd/train.hpp"
#include "xcpd/verify.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace xcpd;

namespace {

struct SynthOptions {
    SynthSpec spec;
    std::uint64_t seed = 7;
};

struct RunOptions {
    std::string data_path;
    bool synthetic = false;
    SynthOptions synth;
    bool date_column = true;

    std::size_t lookback = 96;
    std::size_t horizon = 24;
    std::size_t stride = 1;
    std::size_t eval_stride = 0;  // 0 = horizon
    double train_frac = 0.7;
    double val_frac = 0.1;

    std::string backbone = "ridge";
    double ridge_lambda = 1.0;

    PluginConfig plugin;
    double lr = 1e-4;
    std::size_t epochs = 10;
    std::size_t patience = 3;
    std::size_t batch_size = 32;
    std::size_t refine_bands = 0;

    std::size_t seasonality = 0;  // 0 = auto from the sampling label
    std::uint64_t seed = 1;
    std::string out = "out";
    bool allow_extended = false;
};

std::chrono::steady_clock::time_point now() { return std::chrono::steady_clock::now(); }

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(now() - start).count();
}

fs::path resolve_out(const std::string& out) {
    fs::path path(out);
    if (const char* root = std::getenv("XCPD_OUT_ROOT"); root && path.is_relative())
        path = fs::path(root) / path;
    fs::create_directories(path);
    return path;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream file(path, std::ios::trunc | std::ios::binary);
    if (!file) throw IoError("cannot open for writing: " + path.string());
    file << text;
    if (!file) throw IoError("write failed: " + path.string());
}

void add_synth_flags(CLI::App* cmd, SynthOptions& opts) {
    cmd->add_option("--channels", opts.spec.channels, "Number of channels (>= 2)");
    cmd->add_option("--length", opts.spec.length, "Total series length (>= 2000)");
    cmd->add_option("--low-amp", opts.spec.low_amp, "Shared low-frequency amplitude");
    cmd->add_option("--mid-amp", opts.spec.mid_amp, "Planted mid-frequency amplitude");
    cmd->add_option("--mid-drift", opts.spec.mid_drift,
                    "Phase random-walk step of the planted signal");
    cmd->add_option("--noise-base", opts.spec.noise_base, "Noise level of ordinary channels");
    cmd->add_option("--noise-pair", opts.spec.noise_pair_a,
                    "Noise level of the noisy planted channel");
    cmd->add_option("--pair-a", opts.spec.pair_a, "First planted channel");
    cmd->add_option("--pair-b", opts.spec.pair_b, "Second planted channel");
}

void add_run_flags(CLI::App* cmd, RunOptions& opts, bool with_training) {
    cmd->add_option("--data", opts.data_path, "CSV dataset path (ETT layout)");
    cmd->add_flag("--synthetic", opts.synthetic, "Generate the dataset in memory instead");
    cmd->add_option("--data-seed", opts.synth.seed, "Seed of the in-memory synthetic dataset");
    add_synth_flags(cmd, opts.synth);
    cmd->add_flag("--date-column,!--no-date-column", opts.date_column,
                  "Dataset CSV has a leading timestamp column");

    cmd->add_option("--lookback", opts.lookback, "Lookback length fed to the backbone");
    cmd->add_option("--horizon", opts.horizon, "Forecasting horizon");
    cmd->add_option("--stride", opts.stride, "Training window stride");
    cmd->add_option("--eval-stride", opts.eval_stride,
                    "Validation/test window stride (0 = horizon)");
    cmd->add_option("--train-frac", opts.train_frac, "Training split fraction");
    cmd->add_option("--val-frac", opts.val_frac, "Validation split fraction");

    cmd->add_option("--backbone", opts.backbone, "Frozen backbone: ridge or naive")
        ->check(CLI::IsMember({"ridge", "naive"}));
    cmd->add_option("--ridge-lambda", opts.ridge_lambda, "Ridge penalty");

    cmd->add_option("--patch-len", opts.plugin.patch_len, "Patch length");
    cmd->add_option("--embed-dim", opts.plugin.embed_dim, "Patch embedding dimension");
    cmd->add_option("--gnn-layers", opts.plugin.gnn_layers, "Propagation layers");
    cmd->add_option("--knn-alpha", opts.plugin.knn_alpha, "Neighbor ratio in (0, 1]");
    cmd->add_option("--tau", opts.plugin.router_tau, "Routing threshold");
    cmd->add_option("--noise-eps", opts.plugin.noise_eps, "Routing noise scale");
    cmd->add_option("--temperature", opts.plugin.temperature, "Band membership sharpness");
    cmd->add_option("--band-tau1", opts.plugin.band_tau1, "Lower band boundary (0 = n/3)");
    cmd->add_option("--band-tau2", opts.plugin.band_tau2, "Upper band boundary (0 = 2n/3)");
    cmd->add_option("--mu", opts.plugin.mu, "Entropy regularizer weight");
    cmd->add_option("--beta", opts.plugin.beta, "Balance regularizer weight");
    cmd->add_option("--delta-stab", opts.plugin.delta_stab, "Stability constant");

    cmd->add_option("--seasonality", opts.seasonality, "MASE period (0 = auto)");
    cmd->add_option("--seed", opts.seed, "Run seed");
    cmd->add_option("--out", opts.out, "Output directory");

    if (with_training) {
        cmd->add_option("--lr", opts.lr, "Learning rate");
        cmd->add_option("--epochs", opts.epochs, "Epoch budget");
        cmd->add_option("--patience", opts.patience, "Early-stopping patience");
        cmd->add_option("--batch-size", opts.batch_size, "Windows per optimizer step");
        cmd->add_option("--refine-bands", opts.refine_bands,
                        "Grid size for band-boundary refinement (0 = off)");
    }
}

void validate_run_options(const RunOptions& opts) {
    if (!opts.allow_extended) {
        const bool tau_ok = std::fabs(opts.plugin.router_tau - 0.0) < 1e-12 ||
                            std::fabs(opts.plugin.router_tau - 0.5) < 1e-12;
        if (!tau_ok)
            throw ConfigError(
                "tau must be 0.0 or 0.5; pass --allow-extended for other thresholds");
    }
    if (opts.train_frac <= 0.0 || opts.val_frac < 0.0 ||
        opts.train_frac + opts.val_frac >= 1.0)
        throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val < 1");
    if (!opts.synthetic && opts.data_path.empty())
        throw ConfigError("either --data or --synthetic is required");
}

SeriesDataset load_dataset(const RunOptions& opts) {
    SeriesDataset ds = opts.synthetic ? synth_generate(opts.synth.spec, opts.synth.seed)
                                      : load_csv(opts.data_path, opts.date_column);
    ds.train_frac = opts.train_frac;
    ds.val_frac = opts.val_frac;
    ds.normalize();
    return ds;
}

std::size_t effective_seasonality(const RunOptions& opts, const SeriesDataset& ds) {
    if (opts.seasonality != 0) return opts.seasonality;
    return ds.sampling == "hourly" ? 24 : 1;
}

// Frozen backbone behind one interface.
struct Backbone {
    std::string kind;
    std::size_t horizon = 0;
    std::optional<RidgeBackbone> ridge;

    DenseMatrix predict(const DenseMatrix& lookback) const {
        if (ridge) return ridge->predict(lookback);
        return backbone_naive(lookback, horizon);
    }
};

Backbone fit_backbone(const RunOptions& opts, const std::vector<Window>& train_windows) {
    Backbone model;
    model.kind = opts.backbone;
    model.horizon = opts.horizon;
    if (opts.backbone == "ridge")
        model.ridge = backbone_ridge(train_windows, opts.ridge_lambda);
    return model;
}

PairDataset make_pairs(const Backbone& backbone, const std::vector<Window>& train_windows,
                       const std::vector<Window>& val_windows) {
    PairDataset pairs;
    pairs.train.reserve(train_windows.size());
    for (const Window& w : train_windows)
        pairs.train.push_back({backbone.predict(w.lookback), w.target});
    pairs.val.reserve(val_windows.size());
    for (const Window& w : val_windows)
        pairs.val.push_back({backbone.predict(w.lookback), w.target});
    return pairs;
}

// Shared basis from at most 256 uniformly sampled training predictions, using
// the run seed's initial embedding weights; frozen afterwards.
SharedBasis fit_basis(const std::vector<WindowPair>& train_pairs, const PluginConfig& config,
                      std::uint64_t seed) {
    Rng rng(seed);
    const PluginParameters params = init_params(config, rng);
    const std::size_t total = train_pairs.size();
    const std::size_t take = std::min<std::size_t>(total, 256);
    std::vector<LaplacianMatrix> laps;
    laps.reserve(take);
    for (std::size_t k = 0; k < take; ++k) {
        const std::size_t idx = k * total / take;
        const PatchResult pr = patch(train_pairs[idx].prediction, config.patch_len);
        const DenseMatrix emb = embed(pr.patches, params.embed_w, params.embed_b);
        laps.push_back(normalized_laplacian(nonneg_shift(cosine_adjacency(emb))));
    }
    return fit_shared_basis(laps);
}

json config_echo(const RunOptions& opts) {
    json cfg;
    cfg["data"] = opts.synthetic ? "synthetic" : opts.data_path;
    cfg["data_seed"] = opts.synth.seed;
    cfg["lookback"] = opts.lookback;
    cfg["horizon"] = opts.horizon;
    cfg["stride"] = opts.stride;
    cfg["eval_stride"] = opts.eval_stride;
    cfg["train_frac"] = opts.train_frac;
    cfg["val_frac"] = opts.val_frac;
    cfg["backbone"] = opts.backbone;
    cfg["ridge_lambda"] = opts.ridge_lambda;
    cfg["patch_len"] = opts.plugin.patch_len;
    cfg["embed_dim"] = opts.plugin.embed_dim;
    cfg["gnn_layers"] = opts.plugin.gnn_layers;
    cfg["knn_alpha"] = opts.plugin.knn_alpha;
    cfg["tau"] = opts.plugin.router_tau;
    cfg["noise_eps"] = opts.plugin.noise_eps;
    cfg["temperature"] = opts.plugin.temperature;
    cfg["band_tau1"] = opts.plugin.band_tau1;
    cfg["band_tau2"] = opts.plugin.band_tau2;
    cfg["mu"] = opts.plugin.mu;
    cfg["beta"] = opts.plugin.beta;
    cfg["delta_stab"] = opts.plugin.delta_stab;
    cfg["lr"] = opts.lr;
    cfg["epochs"] = opts.epochs;
    cfg["patience"] = opts.patience;
    cfg["batch_size"] = opts.batch_size;
    cfg["seed"] = opts.seed;
    return cfg;
}

json metrics_to_json(const MetricsReport& report) {
    json out;
    out["mae"] = report.mae;
    out["mse"] = report.mse;
    out["smape"] = report.smape;
    out["mase"] = report.mase;
    out["mase_defined"] = report.mase_defined;
    out["owa"] = report.owa;
    out["owa_defined"] = report.owa_defined;
    out["seasonality"] = report.seasonality;
    return out;
}

int cmd_synth(const SynthOptions& opts, const std::string& out) {
    const auto start = now();
    const SeriesDataset ds = synth_generate(opts.spec, opts.seed);
    const fs::path dir = resolve_out(out);
    write_csv((dir / "synthetic.csv").string(), ds, true);

    json sidecar;
    sidecar["seed"] = opts.seed;
    sidecar["channels"] = opts.spec.channels;
    sidecar["length"] = opts.spec.length;
    sidecar["low_periods"] = opts.spec.low_periods;
    sidecar["low_amp"] = opts.spec.low_amp;
    sidecar["mid_periods"] = opts.spec.mid_periods;
    sidecar["mid_amp"] = opts.spec.mid_amp;
    sidecar["mid_drift"] = opts.spec.mid_drift;
    sidecar["pair_a"] = opts.spec.pair_a;
    sidecar["pair_b"] = opts.spec.pair_b;
    sidecar["noise_base"] = opts.spec.noise_base;
    sidecar["noise_pair_a"] = opts.spec.noise_pair_a;
    write_text(dir / "synthetic_params.json", sidecar.dump(2) + "\n");

    std::cout << "wrote " << (dir / "synthetic.csv").string() << " (" << opts.spec.channels
              << " channels x " << opts.spec.length << ")\n";
    std::cerr << "[time] synth " << seconds_since(start) << " s\n";
    return 0;
}

struct PreparedRun {
    SeriesDataset dataset;
    std::vector<Window> train_windows;
    std::vector<Window> val_windows;
    Backbone backbone;
    PairDataset pairs;
};

PreparedRun prepare(const RunOptions& opts) {
    PreparedRun run;
    run.dataset = load_dataset(opts);
    const std::size_t val_stride = opts.eval_stride == 0 ? opts.horizon : opts.eval_stride;
    run.train_windows =
        windowize(run.dataset, Split::Train, opts.lookback, opts.horizon, opts.stride);
    run.val_windows =
        windowize(run.dataset, Split::Val, opts.lookback, opts.horizon, val_stride);
    run.backbone = fit_backbone(opts, run.train_windows);
    run.pairs = make_pairs(run.backbone, run.train_windows, run.val_windows);
    return run;
}

TrainResult train_with_refinement(RunOptions& opts, const PreparedRun& run,
                                  SharedBasis& basis) {
    TrainOptions options;
    options.lr = opts.lr;
    options.epochs = opts.epochs;
    options.patience = opts.patience;
    options.batch_size = opts.batch_size;
    options.seed = opts.seed;

    if (opts.refine_bands >= 2) {
        // Short pilot trainings over a coarse boundary grid; the best
        // validation pair wins and the full run uses it.
        const double n = static_cast<double>(opts.plugin.node_count());
        TrainOptions pilot = options;
        pilot.epochs = std::max<std::size_t>(1, opts.epochs / 4);
        double best_val = std::numeric_limits<double>::infinity();
        std::pair<double, double> best_taus = opts.plugin.band_taus();
        for (std::size_t a = 0; a < opts.refine_bands; ++a) {
            for (std::size_t b = a + 1; b < opts.refine_bands; ++b) {
                const double t1 =
                    1.0 + (n - 1.0) * static_cast<double>(a + 1) /
                              static_cast<double>(opts.refine_bands + 1);
                const double t2 =
                    1.0 + (n - 1.0) * static_cast<double>(b + 1) /
                              static_cast<double>(opts.refine_bands + 1);
                PluginConfig candidate = opts.plugin;
                candidate.band_tau1 = t1;
                candidate.band_tau2 = t2;
                const TrainResult trial = train(run.pairs, candidate, pilot, basis);
                if (trial.report.best_val_mse < best_val) {
                    best_val = trial.report.best_val_mse;
                    best_taus = {t1, t2};
                }
            }
        }
        opts.plugin.band_tau1 = best_taus.first;
        opts.plugin.band_tau2 = best_taus.second;
        std::cerr << "[refine] band boundaries (" << best_taus.first << ", "
                  << best_taus.second << ")\n";
    }
    return train(run.pairs, opts.plugin, options, basis);
}

int cmd_train(RunOptions& opts) {
    const auto start = now();
    validate_run_options(opts);
    PreparedRun run = prepare(opts);
    opts.plugin.channels = run.dataset.channels();
    opts.plugin.horizon = opts.horizon;
    opts.plugin.validate();

    SharedBasis basis = fit_basis(run.pairs.train, opts.plugin, opts.seed);
    const TrainResult result = train_with_refinement(opts, run, basis);

    const fs::path dir = resolve_out(opts.out);
    save_checkpoint((dir / "checkpoint.bin").string(),
                    {opts.plugin, result.best_params, basis});

    json report;
    report["seed"] = result.report.seed;
    report["config"] = config_echo(opts);
    report["identity_val_mse"] = result.report.identity_val_mse;
    report["epochs"] = json::array();
    for (const EpochStats& stats : result.report.epochs) {
        json e;
        e["epoch"] = stats.epoch;
        e["train_loss"] = stats.train_loss;
        e["val_mse"] = stats.val_mse;
        e["expert_count_hist"] = stats.expert_count_hist;
        e["band_hist"] = stats.band_hist;
        report["epochs"].push_back(e);
    }
    report["best_epoch"] = result.report.best_epoch;
    report["best_val_mse"] = result.report.best_val_mse;
    write_text(dir / "train_report.json", report.dump(2) + "\n");

    std::cout << "best epoch " << result.report.best_epoch << ", validation mse "
              << result.report.best_val_mse << " (identity " << result.report.identity_val_mse
              << ")\n";
    std::cout << "wrote " << (dir / "checkpoint.bin").string() << " and train_report.json\n";
    std::cerr << "[time] train " << seconds_since(start) << " s\n";
    return 0;
}

std::vector<Window> split_windows(const RunOptions& opts, const SeriesDataset& ds,
                                  const std::string& split) {
    const std::size_t stride = opts.eval_stride == 0 ? opts.horizon : opts.eval_stride;
    if (split == "train") return windowize(ds, Split::Train, opts.lookback, opts.horizon, stride);
    if (split == "val") return windowize(ds, Split::Val, opts.lookback, opts.horizon, stride);
    return windowize(ds, Split::Test, opts.lookback, opts.horizon, stride);
}

DenseMatrix insample_region(const SeriesDataset& ds, const std::string& split) {
    std::size_t end = ds.train_len();
    if (split == "val") end = ds.train_len();
    if (split == "test") end = ds.train_len() + ds.val_len();
    DenseMatrix out(ds.channels(), end);
    for (std::size_t c = 0; c < ds.channels(); ++c)
        for (std::size_t t = 0; t < end; ++t) out(c, t) = ds.values(c, t);
    return out;
}

void write_predictions_csv(const fs::path& path, const std::vector<Window>& windows,
                           const std::vector<DenseMatrix>& preds,
                           const std::vector<std::string>& names) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "t";
    for (const std::string& name : names) out << ',' << name;
    out << '\n';
    char buf[32];
    for (std::size_t w = 0; w < windows.size(); ++w)
        for (std::size_t h = 0; h < preds[w].cols(); ++h) {
            out << windows[w].target_start + h;
            for (std::size_t c = 0; c < preds[w].rows(); ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", preds[w](c, h));
                out << ',' << buf;
            }
            out << '\n';
        }
}

int cmd_eval(RunOptions& opts, const std::string& checkpoint_path, const std::string& split) {
    const auto start = now();
    validate_run_options(opts);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);

    SeriesDataset ds = load_dataset(opts);
    if (ds.channels() != ckpt.config.channels || opts.horizon != ckpt.config.horizon)
        throw ConfigError("checkpoint shape (" + std::to_string(ckpt.config.channels) + " x " +
                          std::to_string(ckpt.config.horizon) + ") does not match dataset (" +
                          std::to_string(ds.channels()) + " x " + std::to_string(opts.horizon) +
                          ")");

    const auto train_windows =
        windowize(ds, Split::Train, opts.lookback, opts.horizon, opts.stride);
    const Backbone backbone = fit_backbone(opts, train_windows);
    const auto eval_windows = split_windows(opts, ds, split);

    std::vector<DenseMatrix> backbone_preds, plugin_preds, truths, naive2;
    const std::size_t season = effective_seasonality(opts, ds);
    Rng rng(opts.seed);
    for (const Window& w : eval_windows) {
        DenseMatrix base = backbone.predict(w.lookback);
        const ForwardTrace trace =
            forward(base, ckpt.params, ckpt.config, ckpt.basis, /*training=*/false, rng);
        plugin_preds.push_back(trace.prediction);
        backbone_preds.push_back(std::move(base));
        truths.push_back(w.target);
        naive2.push_back(seasonal_naive(w.lookback, opts.horizon, season));
    }

    const DenseMatrix insample = insample_region(ds, split);
    const MetricsReport backbone_metrics =
        metrics(backbone_preds, truths, insample, season, &naive2);
    const MetricsReport plugin_metrics = metrics(plugin_preds, truths, insample, season, &naive2);

    const fs::path dir = resolve_out(opts.out);
    write_text(dir / ("metrics_backbone_" + split + ".json"),
               metrics_to_json(backbone_metrics).dump(2) + "\n");
    write_text(dir / ("metrics_plugin_" + split + ".json"),
               metrics_to_json(plugin_metrics).dump(2) + "\n");

    json improvement;
    improvement["split"] = split;
    improvement["windows"] = eval_windows.size();
    improvement["backbone_mse"] = backbone_metrics.mse;
    improvement["plugin_mse"] = plugin_metrics.mse;
    improvement["backbone_mae"] = backbone_metrics.mae;
    improvement["plugin_mae"] = plugin_metrics.mae;
    improvement["mse_improvement_pct"] =
        backbone_metrics.mse > 0.0
            ? 100.0 * (backbone_metrics.mse - plugin_metrics.mse) / backbone_metrics.mse
            : 0.0;
    write_text(dir / ("improvement_" + split + ".json"), improvement.dump(2) + "\n");

    write_predictions_csv(dir / ("predictions_backbone_" + split + ".csv"), eval_windows,
                          backbone_preds, ds.channel_names);
    write_predictions_csv(dir / ("predictions_plugin_" + split + ".csv"), eval_windows,
                          plugin_preds, ds.channel_names);

    std::cout << split << ": backbone mse " << backbone_metrics.mse << ", plugin mse "
              << plugin_metrics.mse << " ("
              << improvement["mse_improvement_pct"].get<double>() << "% better)\n";
    std::cerr << "[time] eval " << seconds_since(start) << " s\n";
    return 0;
}

int cmd_inspect(RunOptions& opts, const std::string& checkpoint_path, std::size_t window_index,
                const std::string& split) {
    const auto start = now();
    validate_run_options(opts);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    SeriesDataset ds = load_dataset(opts);
    if (ds.channels() != ckpt.config.channels || opts.horizon != ckpt.config.horizon)
        throw ConfigError("checkpoint shape does not match dataset");

    const auto train_windows =
        windowize(ds, Split::Train, opts.lookback, opts.horizon, opts.stride);
    const Backbone backbone = fit_backbone(opts, train_windows);
    const auto eval_windows = split_windows(opts, ds, split);
    if (window_index >= eval_windows.size())
        throw UsageError("window index " + std::to_string(window_index) + " out of range (" +
                         std::to_string(eval_windows.size()) + " windows)");

    Rng rng(opts.seed);
    const DenseMatrix base = backbone.predict(eval_windows[window_index].lookback);
    const ForwardTrace trace =
        forward(base, ckpt.params, ckpt.config, ckpt.basis, /*training=*/false, rng);

    const fs::path dir = resolve_out(opts.out);
    std::ofstream out(dir / "spectrum.csv", std::ios::trunc);
    if (!out) throw IoError("cannot open spectrum.csv for writing");
    out << "node_id,channel,patch,group,energy_low,energy_mid,energy_high,experts\n";
    static const char* kBandNames[3] = {"low", "mid", "high"};
    char buf[32];
    const std::size_t n = trace.grid.node_count();
    for (std::size_t i = 0; i < n; ++i) {
        double band_energy[3] = {0.0, 0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j)
            for (int b = 0; b < 3; ++b)
                band_energy[b] += trace.bands.memberships(j, b) * trace.energy(i, j);
        out << i << ',' << trace.grid.node_channel(i) << ',' << trace.grid.node_patch(i) << ','
            << kBandNames[trace.groups.labels[i]];
        for (int b = 0; b < 3; ++b) {
            std::snprintf(buf, sizeof(buf), "%.17g", band_energy[b]);
            out << ',' << buf;
        }
        out << ',';
        bool first = true;
        for (int b = 0; b < 3; ++b)
            if (trace.decisions[i].experts[b]) {
                if (!first) out << '|';
                out << kBandNames[b];
                first = false;
            }
        out << '\n';
    }
    std::cout << "wrote " << (dir / "spectrum.csv").string() << " (" << n << " nodes)\n";
    std::cerr << "[time] inspect-spectrum " << seconds_since(start) << " s\n";
    return 0;
}

int cmd_verify(const std::string& out, const std::string& inject_fault) {
    const auto start = now();
    const std::vector<verify::CheckResult> results = verify::run_all(inject_fault);
    bool all_passed = true;
    json report;
    report["checks"] = json::array();
    for (const verify::CheckResult& check : results) {
        all_passed = all_passed && check.passed;
        std::cout << (check.passed ? "[PASS] " : "[FAIL] ") << check.name << " (" << check.trials
                  << " trials): " << check.detail << "\n";
        json entry;
        entry["name"] = check.name;
        entry["passed"] = check.passed;
        entry["trials"] = check.trials;
        entry["detail"] = check.detail;
        report["checks"].push_back(entry);
    }
    report["all_passed"] = all_passed;
    if (!inject_fault.empty()) report["injected_fault"] = inject_fault;
    const fs::path dir = resolve_out(out);
    write_text(dir / "verify_report.json", report.dump(2) + "\n");
    std::cerr << "[time] verify " << seconds_since(start) << " s\n";
    return all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral channel-patch dependency plugin for multivariate forecasting"};
    app.require_subcommand(0, 1);
    app.set_config("--config", "", "Read options from an INI file with per-command sections");
    app.allow_config_extras(false);
    bool print_config = false;
    app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");

    RunOptions opts;
    app.add_flag("--allow-extended", opts.allow_extended,
                 "Allow hyperparameters outside the documented sets");

    SynthOptions synth_opts;
    std::string synth_out = "out";
    CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset CSV");
    add_synth_flags(synth_cmd, synth_opts);
    synth_cmd->add_option("--seed", synth_opts.seed, "Generator seed");
    synth_cmd->add_option("--out", synth_out, "Output directory");

    CLI::App* train_cmd = app.add_subcommand("train", "Fit the plugin over a frozen backbone");
    add_run_flags(train_cmd, opts, /*with_training=*/true);

    std::string checkpoint_path = "out/checkpoint.bin";
    std::string eval_split = "test";
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "Evaluate backbone-alone vs backbone+plugin");
    add_run_flags(eval_cmd, opts, /*with_training=*/false);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Trained checkpoint path");
    eval_cmd->add_option("--split", eval_split, "Evaluation split")
        ->check(CLI::IsMember({"train", "val", "test"}));

    std::size_t window_index = 0;
    CLI::App* inspect_cmd =
        app.add_subcommand("inspect-spectrum", "Dump per-node spectral energies as CSV");
    add_run_flags(inspect_cmd, opts, /*with_training=*/false);
    inspect_cmd->add_option("--checkpoint", checkpoint_path, "Trained checkpoint path");
    inspect_cmd->add_option("--split", eval_split, "Split providing the window")
        ->check(CLI::IsMember({"train", "val", "test"}));
    inspect_cmd->add_option("--window", window_index, "Window index within the split");

    std::string verify_out = "out";
    std::string inject_fault;
    CLI::App* verify_cmd =
        app.add_subcommand("verify", "Run the property-check suite at desk scale");
    verify_cmd->add_option("--out", verify_out, "Output directory for the JSON summary");
    verify_cmd->add_option("--inject-fault", inject_fault,
                           "Test hook: name a fault to plant (energy-sign)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    }

    if (print_config) {
        std::cout << app.config_to_str(true, true);
        return 0;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth_opts, synth_out);
        if (train_cmd->parsed()) return cmd_train(opts);
        if (eval_cmd->parsed()) return cmd_eval(opts, checkpoint_path, eval_split);
        if (inspect_cmd->parsed())
            return cmd_inspect(opts, checkpoint_path, window_index, eval_split);
        if (verify_cmd->parsed()) return cmd_verify(verify_out, inject_fault);
        std::cout << app.help();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const IngestError& e) {
        std::cerr << "ingest error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
