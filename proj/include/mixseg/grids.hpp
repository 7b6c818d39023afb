#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "mixseg/config.hpp"

namespace mixseg {

// One ablation-grid row: a named mutation of the base config.
struct GridRow {
    std::string name;
    std::function<void(TrainConfig&)> apply;
};

// The seven loss-switch combinations, from source-only supervision up to the
// full method.
inline std::vector<GridRow> losses_grid() {
    auto sw = [](bool ls, bool lt, bool inter, bool intra) {
        return [=](TrainConfig& c) {
            c.use_ls = ls;
            c.use_lt = lt;
            c.use_inter = inter;
            c.use_intra = intra;
        };
    };
    return {
        {"ls", sw(true, false, false, false)},
        {"lt", sw(false, true, false, false)},
        {"ls+lt", sw(true, true, false, false)},
        {"lt+intra", sw(false, true, false, true)},
        {"ls+lt+inter", sw(true, true, true, false)},
        {"ls+lt+intra", sw(true, true, false, true)},
        {"ls+lt+inter+intra", sw(true, true, true, true)},
    };
}

inline std::vector<GridRow> strategies_grid() {
    auto st = [](Strategy s) { return [=](TrainConfig& c) { c.strategy = s; }; };
    return {
        {"two_xu_two_streams", st(Strategy::TwoXuTwoStreams)},
        {"one_xu_one_stream", st(Strategy::OneXuOneStream)},
        {"one_xu_two_streams", st(Strategy::OneXuTwoStreams)},
    };
}

// The five (lambda, mu) pairs of the loss-weight sweep.
inline std::vector<GridRow> weights_grid() {
    auto lm = [](double l, double m) {
        return [=](TrainConfig& c) {
            c.lambda = l;
            c.mu = m;
        };
    };
    return {
        {"lambda0.1_mu1", lm(0.1, 1.0)},
        {"lambda2_mu1", lm(2.0, 1.0)},
        {"lambda1_mu1", lm(1.0, 1.0)},
        {"lambda1_mu2", lm(1.0, 2.0)},
        {"lambda1_mu0.1", lm(1.0, 0.1)},
    };
}

inline std::vector<GridRow> named_grid(const std::string& name) {
    if (name == "losses") return losses_grid();
    if (name == "strategies") return strategies_grid();
    if (name == "weights") return weights_grid();
    throw ConfigError("unknown grid '" + name + "' (expected losses, strategies or weights)");
}

struct GridCell {
    std::string row;
    std::uint64_t seed = 0;
    double final_miou = 0.0;
};

struct GridRowResult {
    std::string row;
    std::vector<double> mious;  // ordered by seed
    double median = 0.0;
};

struct GridResult {
    std::vector<GridCell> cells;
    std::vector<GridRowResult> rows;
};

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::size_t grid_jobs_limit(std::size_t requested) {
    std::size_t cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* env = std::getenv("MIXSEG_THREADS")) {
        const long v = std::atol(env);
        if (v > 0) cap = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::min(requested ? requested : cap, cap));
}

// Runs rows x seeds independent configs, at most `jobs` at a time. Each run
// gets its own trainer and RNG; the dataset is shared read-only. Run
// directories land under out_dir/<row>/seed<N> when out_dir is non-empty.
template <typename T = float>
GridResult run_grid(const TrainConfig& base, const std::vector<GridRow>& rows,
                    std::size_t n_seeds, const DatasetSplit& data, std::size_t jobs,
                    const std::string& out_dir = "", std::ostream* progress = nullptr) {
    struct Task {
        std::size_t row_idx;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::uint64_t s = 0; s < n_seeds; ++s) tasks.push_back({r, base.seed + s});

    GridResult result;
    result.cells.resize(tasks.size());
    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task& t = tasks[i];
            TrainConfig cfg = base;
            rows[t.row_idx].apply(cfg);
            cfg.seed = t.seed;
            std::string run_dir;
            if (!out_dir.empty())
                run_dir = out_dir + "/" + rows[t.row_idx].name + "/seed" + std::to_string(t.seed);
            const RunReport rep = run<T>(cfg, data, run_dir, nullptr);
            result.cells[i] = {rows[t.row_idx].name, t.seed, rep.final_miou};
            if (progress) {
                std::lock_guard<std::mutex> lock(io_mutex);
                *progress << rows[t.row_idx].name << " seed " << t.seed << ": mIoU "
                          << 100.0 * rep.final_miou << "\n";
            }
        }
    };

    const std::size_t n_workers = std::min(grid_jobs_limit(jobs), tasks.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    for (std::size_t r = 0; r < rows.size(); ++r) {
        GridRowResult rr;
        rr.row = rows[r].name;
        for (const auto& c : result.cells)
            if (c.row == rows[r].name) rr.mious.push_back(c.final_miou);
        rr.median = median_of(rr.mious);
        result.rows.push_back(std::move(rr));
    }
    return result;
}

inline void write_grid_csv(const GridResult& g, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw RuntimeAbort("cannot write " + path.string());
    os << "row,seed,miou\n";
    os.precision(10);
    for (const auto& c : g.cells) os << c.row << ',' << c.seed << ',' << c.final_miou << "\n";
    os << "\nrow,median_miou\n";
    for (const auto& r : g.rows) os << r.row << ',' << r.median << "\n";
}

inline void write_grid_markdown(const GridResult& g, const std::filesystem::path& path,
                                const std::string& title) {
    std::ofstream os(path);
    if (!os) throw RuntimeAbort("cannot write " + path.string());
    os << "# " << title << "\n\n| row | median mIoU % | per-seed mIoU % |\n|---|---|---|\n";
    os << std::fixed;
    os.precision(2);
    for (const auto& r : g.rows) {
        os << "| " << r.row << " | " << 100.0 * r.median << " | ";
        for (std::size_t i = 0; i < r.mious.size(); ++i)
            os << (i ? ", " : "") << 100.0 * r.mious[i];
        os << " |\n";
    }
}

}  // namespace mixseg
