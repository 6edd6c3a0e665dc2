#pragma once

// Training runs and sweeps: one CSV row per epoch plus a stability report.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stable16/data.hpp"
#include "stable16/stability.hpp"

namespace stable16 {

/// Parses "fp16", "fp32" or "fp64"; throws std::invalid_argument otherwise.
ScalarKind parse_precision(std::string_view name);

struct RunConfig {
    ScalarKind precision = ScalarKind::f16;
    OptimizerKind optimizer = OptimizerKind::adam;
    bool guard = false;
    double epsilon = 1e-7;
    double eta = 1e-3;
    double beta1 = 0.9;
    std::optional<double> beta2;
    std::optional<double> guard_floor;
    double loss_scale = 1.0;
    std::size_t batch_size = 512;
    int epochs = 5;
    std::uint64_t seed = 1;
    std::size_t train_limit = 10000;
    std::size_t test_limit = 10000;
    std::vector<std::size_t> dims = {784, 256, 256, 10};
    std::string out_path;
    bool diagnostic = false;
    bool fp16_min_normal = false;

    /// [784, 256, 256, 10], 10000 training examples, 5 epochs, batch 512, η = 1e-2.
    static RunConfig desk();
    /// [784, 2048, 2048, 10] on the full training set.
    static RunConfig paper_dnn();
    /// Throws std::invalid_argument for "desk" / "paper-dnn" misspellings.
    static RunConfig preset(std::string_view name);

    HyperParams hyper() const;
    /// Throws std::invalid_argument with the offending field.
    void validate() const;
    std::string label() const;
};

struct RunRecord {
    std::string precision;
    std::string optimizer;
    bool guard = false;
    double epsilon = 0;
    int epoch = 0;
    double train_loss = 0;
    double test_accuracy = 0;
    std::uint64_t nan_count = 0;
    std::uint64_t inf_count = 0;
    double grad_abs_max = 0;
    double grad_abs_min_nonzero = 0;
    double wall_time_s = 0;
};

/// Per-epoch, per-parameter-tensor gradient magnitudes.
struct GradientPoint {
    int epoch = 0;
    std::size_t tensor = 0;
    double abs_max = 0;
    double abs_min_nonzero = 0;
};

struct RunResult {
    RunConfig config;
    std::vector<RunRecord> records;
    StabilityReport report;
    std::vector<GradientPoint> gradient_series;

    double final_accuracy() const { return records.empty() ? 0.0 : records.back().test_accuracy; }
};

std::string csv_header();
std::string csv_row(const RunRecord& r);
void write_csv(std::ostream& out, const std::vector<RunRecord>& records);
void write_gradient_series(std::ostream& out, const RunResult& result);

using ProgressFn = std::function<void(const RunRecord&)>;

/// Trains on `train` (already limited) and evaluates on `test` each epoch.
RunResult run_training(const RunConfig& config, const data::Dataset& train, const data::Dataset& test,
                       const ProgressFn& progress = {});

/// Applies config.train_limit / test_limit (seeded subset) then trains.
RunResult run_experiment(const RunConfig& config, const data::Dataset& train, const data::Dataset& test,
                         const ProgressFn& progress = {});

struct SweepSpec {
    std::vector<double> epsilons;
    std::vector<bool> guards;
    std::vector<ScalarKind> precisions;
    std::vector<OptimizerKind> optimizers;
};

/// Cartesian product of the sweep axes over the base config. Every config is
/// validated before any is returned.
std::vector<RunConfig> expand_sweep(const RunConfig& base, const SweepSpec& spec);

/// Runs configs on up to `jobs` threads; results are in config order.
std::vector<RunResult> run_sweep(const std::vector<RunConfig>& configs, const data::Dataset& train,
                                 const data::Dataset& test, unsigned jobs, const ProgressFn& progress = {});

/// All records sorted by (precision, optimizer, guard, epsilon, epoch).
std::vector<RunRecord> merge_records(const std::vector<RunResult>& results);

}  // namespace stable16
