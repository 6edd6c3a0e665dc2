#include "stable16/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <thread>
#include <tuple>

#include "stable16/rng.hpp"

namespace stable16 {

ScalarKind parse_precision(std::string_view name) {
    if (name == "fp16") return ScalarKind::f16;
    if (name == "fp32") return ScalarKind::f32;
    if (name == "fp64") return ScalarKind::f64;
    throw std::invalid_argument("unknown precision '" + std::string(name) + "' (expected fp16, fp32 or fp64)");
}

RunConfig RunConfig::desk() {
    RunConfig c;
    c.eta = 1e-2;
    return c;
}

RunConfig RunConfig::paper_dnn() {
    RunConfig c = desk();
    c.dims = {784, 2048, 2048, 10};
    c.train_limit = 60000;
    return c;
}

RunConfig RunConfig::preset(std::string_view name) {
    if (name == "desk") return desk();
    if (name == "paper-dnn") return paper_dnn();
    throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected desk or paper-dnn)");
}

HyperParams RunConfig::hyper() const {
    HyperParams hp;
    hp.eta = eta;
    hp.beta1 = beta1;
    hp.beta2 = beta2;
    hp.epsilon = epsilon;
    hp.loss_scale = loss_scale;
    hp.guard = guard;
    hp.guard_floor = guard_floor;
    return hp;
}

void RunConfig::validate() const {
    hyper().validate();
    if (batch_size == 0) throw std::invalid_argument("config: batch_size must be at least 1");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be at least 1");
    if (train_limit == 0) throw std::invalid_argument("config: train_limit must be at least 1");
    if (test_limit == 0) throw std::invalid_argument("config: test_limit must be at least 1");
    if (dims.size() < 2) throw std::invalid_argument("config: dims needs at least input and output sizes");
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("config: dims must be positive");
    }
    if (dims.back() != 10) throw std::invalid_argument("config: the output layer must have 10 classes");
}

std::string RunConfig::label() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s-%s-%s-eps%g", std::string(to_string(precision)).c_str(),
                  std::string(to_string(optimizer)).c_str(), guard ? "guard" : "noguard", epsilon);
    return buf;
}

namespace {

std::string g6(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

constexpr std::size_t kEvalChunk = 1000;

template <TensorScalar T>
RunResult train_typed(const RunConfig& cfg, const data::Dataset& train, const data::Dataset& test,
                      const ProgressFn& progress) {
    using Clock = std::chrono::steady_clock;
    const HyperParams hp = cfg.hyper();
    const auto limits = cfg.precision == ScalarKind::f16 ? PredicateLimits::fp16(cfg.fp16_min_normal)
                                                         : PredicateLimits::of<T>(cfg.fp16_min_normal);
    RunResult result;
    result.config = cfg;

    MlpModel<T> model = MlpModel<T>::init(derive_seed(cfg.seed, 1), cfg.dims);
    if (model.dims().front() != train.features()) {
        throw std::invalid_argument("config: input size " + std::to_string(model.dims().front()) +
                                    " does not match " + std::to_string(train.features()) + " features");
    }
    ParamSet<T> params = model.parameters();
    OptimState<T> state = OptimState<T>::zeros_like(params, cfg.optimizer);
    StabilityMonitor<T> monitor(cfg.optimizer, hp, limits, cfg.diagnostic);

    const auto start = Clock::now();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = data::batches(train, cfg.batch_size, derive_seed(cfg.seed, 1000 + epoch));
        std::vector<double> tmax(params.size(), 0.0), tmin(params.size(), 0.0);
        double loss_sum = 0.0;
        for (const auto& idx : order) {
            const data::Batch<T> batch = data::gather<T>(train, idx);
            const MlpModel<T> current(params);
            const LossAndGradients<T> lg = scaled_loss_and_backward(current, batch.x, batch.y, cfg.loss_scale);
            loss_sum += lg.loss_real() * static_cast<double>(idx.size());
            StepOptions options = monitor.options();
            StepResult<T> next = optimizer_step(cfg.optimizer, params, lg.grads.tensors, state, hp, options);
            monitor.after_step(params, state, next, lg.grads);
            for (std::size_t t = 0; t < params.size(); ++t) {
                tmax[t] = std::max(tmax[t], lg.grads.abs_max[t]);
                const double lo = lg.grads.abs_min_nonzero[t];
                if (lo > 0.0 && (tmin[t] == 0.0 || lo < tmin[t])) tmin[t] = lo;
            }
            params = std::move(next.params);
            state = std::move(next.state);
        }

        const MlpModel<T> trained(params);
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < test.size(); begin += kEvalChunk) {
            const std::size_t end = std::min(test.size(), begin + kEvalChunk);
            const data::Batch<T> chunk = data::slice<T>(test, begin, end);
            correct += count_correct(forward(trained, chunk.x).logits(), chunk.y);
        }
        const double accuracy = test.size() ? static_cast<double>(correct) / static_cast<double>(test.size()) : 0.0;
        const double train_loss = loss_sum / static_cast<double>(train.size());
        const EpochStats stats = monitor.end_epoch(epoch, train_loss, accuracy, params);

        RunRecord rec;
        rec.precision = std::string(to_string(cfg.precision));
        rec.optimizer = std::string(to_string(cfg.optimizer));
        rec.guard = cfg.guard;
        rec.epsilon = cfg.epsilon;
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.test_accuracy = accuracy;
        rec.nan_count = stats.nan_created;
        rec.inf_count = stats.overflow_to_inf;
        rec.grad_abs_max = stats.grad_abs_max;
        rec.grad_abs_min_nonzero = stats.grad_abs_min_nonzero;
        rec.wall_time_s = std::chrono::duration<double>(Clock::now() - start).count();
        result.records.push_back(rec);
        for (std::size_t t = 0; t < params.size(); ++t) {
            result.gradient_series.push_back(GradientPoint{epoch, t, tmax[t], tmin[t]});
        }
        if (progress) progress(rec);
    }
    result.report = monitor.report();
    return result;
}

}  // namespace

std::string csv_header() {
    return "precision,optimizer,guard,epsilon,epoch,train_loss,test_accuracy,nan_count,inf_count,grad_abs_max,"
           "grad_abs_min_nonzero,wall_time_s";
}

std::string csv_row(const RunRecord& r) {
    return r.precision + "," + r.optimizer + "," + (r.guard ? "on" : "off") + "," + g6(r.epsilon) + "," +
           std::to_string(r.epoch) + "," + g6(r.train_loss) + "," + g6(r.test_accuracy) + "," +
           std::to_string(r.nan_count) + "," + std::to_string(r.inf_count) + "," + g6(r.grad_abs_max) + "," +
           g6(r.grad_abs_min_nonzero) + "," + g6(r.wall_time_s);
}

void write_csv(std::ostream& out, const std::vector<RunRecord>& records) {
    out << csv_header() << "\n";
    for (const auto& r : records) out << csv_row(r) << "\n";
}

void write_gradient_series(std::ostream& out, const RunResult& result) {
    out << "precision,optimizer,guard,epsilon,epoch,tensor,grad_abs_max,grad_abs_min_nonzero\n";
    const RunConfig& c = result.config;
    for (const auto& p : result.gradient_series) {
        out << to_string(c.precision) << "," << to_string(c.optimizer) << "," << (c.guard ? "on" : "off") << ","
            << g6(c.epsilon) << "," << p.epoch << "," << p.tensor << "," << g6(p.abs_max) << ","
            << g6(p.abs_min_nonzero) << "\n";
    }
}

RunResult run_training(const RunConfig& config, const data::Dataset& train, const data::Dataset& test,
                       const ProgressFn& progress) {
    config.validate();
    switch (config.precision) {
        case ScalarKind::f16: return train_typed<F16>(config, train, test, progress);
        case ScalarKind::f32: return train_typed<float>(config, train, test, progress);
        case ScalarKind::f64: return train_typed<double>(config, train, test, progress);
    }
    throw std::invalid_argument("config: unknown precision");
}

RunResult run_experiment(const RunConfig& config, const data::Dataset& train, const data::Dataset& test,
                         const ProgressFn& progress) {
    config.validate();
    const data::Dataset tr =
        config.train_limit == train.size() ? train : data::subset(train, config.train_limit, derive_seed(config.seed, 7));
    if (config.test_limit >= test.size()) {
        return run_training(config, tr, test, progress);
    }
    const data::Dataset te = data::subset(test, config.test_limit, derive_seed(config.seed, 8));
    return run_training(config, tr, te, progress);
}

std::vector<RunConfig> expand_sweep(const RunConfig& base, const SweepSpec& spec) {
    auto or_base = [](auto values, auto fallback) { return values.empty() ? decltype(values){fallback} : values; };
    const auto precisions = or_base(spec.precisions, base.precision);
    const auto optimizers = or_base(spec.optimizers, base.optimizer);
    const auto guards = or_base(spec.guards, base.guard);
    const auto epsilons = or_base(spec.epsilons, base.epsilon);
    std::vector<RunConfig> out;
    for (ScalarKind p : precisions) {
        for (OptimizerKind o : optimizers) {
            for (bool g : guards) {
                for (double e : epsilons) {
                    RunConfig c = base;
                    c.precision = p;
                    c.optimizer = o;
                    c.guard = g;
                    c.epsilon = e;
                    c.validate();
                    out.push_back(c);
                }
            }
        }
    }
    return out;
}

std::vector<RunResult> run_sweep(const std::vector<RunConfig>& configs, const data::Dataset& train,
                                 const data::Dataset& test, unsigned jobs, const ProgressFn& progress) {
    for (const auto& c : configs) c.validate();
    std::vector<RunResult> results(configs.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            try {
                results[i] = run_experiment(configs[i], train, test, [&](const RunRecord& r) {
                    if (progress) {
                        std::lock_guard lock(progress_mutex);
                        progress(r);
                    }
                });
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(configs.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

std::vector<RunRecord> merge_records(const std::vector<RunResult>& results) {
    std::vector<RunRecord> all;
    for (const auto& r : results) all.insert(all.end(), r.records.begin(), r.records.end());
    std::stable_sort(all.begin(), all.end(), [](const RunRecord& a, const RunRecord& b) {
        return std::tie(a.precision, a.optimizer, a.guard, a.epsilon, a.epoch) <
               std::tie(b.precision, b.optimizer, b.guard, b.epsilon, b.epoch);
    });
    return all;
}

}  // namespace stable16
