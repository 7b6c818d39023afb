#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "mixseg/checkpoint.hpp"
#include "mixseg/dataset_io.hpp"
#include "mixseg/eval.hpp"
#include "mixseg/losses.hpp"
#include "mixseg/mixing.hpp"
#include "mixseg/optim.hpp"

namespace mixseg {

struct TrainConfig {
    std::string dataset_dir;
    std::uint64_t seed = 0;
    std::size_t iters = 2000;
    std::size_t batch_source = 2;
    std::size_t batch_target = 2;
    std::size_t batch_unlabeled = 2;
    double lr_encoder = 3e-4;
    double lr_head = 3e-3;
    std::size_t warmup_iters = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double adam_eps = 1e-8;
    double alpha = 0.99;
    double tau = 0.968;
    double lambda = 1.0;
    double mu = 2.0;
    Strategy strategy = Strategy::OneXuTwoStreams;
    bool use_ls = true;
    bool use_lt = true;
    bool use_inter = true;
    bool use_intra = true;
    bool balanced_sampling = false;
    std::size_t eval_every = 200;
    std::string dump_mixed;  // when set, write every MixedBatch there for visual audit

    // A mixing stream is active only if its switch is on and its weight is
    // positive; a zero weight behaves exactly like a disabled switch.
    bool inter_enabled() const { return use_inter && lambda > 0.0; }
    bool intra_enabled() const { return use_intra && mu > 0.0; }

    void validate() const {
        if (iters > 10'000'000) throw ConfigError("iters implausibly large");
        if (batch_source == 0 || batch_target == 0 || batch_unlabeled == 0)
            throw ConfigError("batch sizes must be positive");
        if (lr_encoder <= 0.0 || lr_head <= 0.0) throw ConfigError("learning rates must be > 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("betas must be in [0,1)");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (adam_eps <= 0.0) throw ConfigError("adam_eps must be > 0");
        if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("alpha must be in [0,1)");
        if (tau <= 0.0 || tau >= 1.0) throw ConfigError("tau must be in (0,1)");
        if (lambda < 0.0 || mu < 0.0) throw ConfigError("lambda and mu must be >= 0");
        if (eval_every == 0) throw ConfigError("eval_every must be positive");
        if (!use_ls && !use_lt && !inter_enabled() && !intra_enabled())
            throw ConfigError("at least one loss stream must be enabled");
    }
};

struct BatchIndices {
    std::vector<std::size_t> source;
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> unlabeled;   // primary recipients
    std::vector<std::size_t> unlabeled2;  // second recipients for two_xu_two_streams
};

namespace detail {

// Labeled-target images containing each class, for optional class-balanced
// sampling of the small labeled pool.
inline std::vector<std::vector<std::size_t>> class_index(const std::vector<Sample>& pool,
                                                         std::size_t num_classes) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        bool seen[256] = {};
        for (std::uint8_t c : pool[i].label.v) seen[c] = true;
        for (std::size_t c = 0; c < num_classes; ++c)
            if (seen[c]) by_class[c].push_back(i);
    }
    std::vector<std::vector<std::size_t>> nonempty;
    for (auto& v : by_class)
        if (!v.empty()) nonempty.push_back(std::move(v));
    return nonempty;
}

}  // namespace detail

// Draws one step's batch. Source and unlabeled pools are sampled uniformly
// with replacement; the small labeled pool is visited round-robin (or
// class-balanced when enabled) so every labeled image recurs. Pools not
// needed by the enabled streams are not drawn from and may be empty.
inline BatchIndices sample_batch(const DatasetSplit& split, const TrainConfig& cfg,
                                 std::size_t step, Rng& rng) {
    const bool need_src = cfg.use_ls || cfg.inter_enabled();
    const bool need_lbl = cfg.use_lt || cfg.intra_enabled();
    const bool need_unl = cfg.inter_enabled() || cfg.intra_enabled();

    BatchIndices b;
    if (need_src) {
        if (split.source.empty()) throw ConfigError("source pool is empty but required");
        for (std::size_t k = 0; k < cfg.batch_source; ++k)
            b.source.push_back(rng.uniform_int(split.source.size()));
    }
    if (need_lbl) {
        if (split.labeled_target.empty())
            throw ConfigError("labeled target pool is empty but required");
        if (cfg.balanced_sampling) {
            static thread_local std::vector<std::vector<std::size_t>> cache;
            static thread_local const void* cache_key = nullptr;
            if (cache_key != &split) {
                cache = detail::class_index(split.labeled_target, split.num_classes);
                cache_key = &split;
            }
            for (std::size_t k = 0; k < cfg.batch_target; ++k) {
                const auto& bucket = cache[rng.uniform_int(cache.size())];
                b.labeled.push_back(bucket[rng.uniform_int(bucket.size())]);
            }
        } else {
            for (std::size_t k = 0; k < cfg.batch_target; ++k)
                b.labeled.push_back((step * cfg.batch_target + k) % split.labeled_target.size());
        }
    }
    if (need_unl) {
        if (split.unlabeled_target.empty())
            throw ConfigError("unlabeled target pool is empty but required");
        for (std::size_t k = 0; k < cfg.batch_unlabeled; ++k)
            b.unlabeled.push_back(rng.uniform_int(split.unlabeled_target.size()));
        if (cfg.strategy == Strategy::TwoXuTwoStreams) {
            if (split.unlabeled_target.size() < 2)
                throw ConfigError("two_xu_two_streams needs at least two unlabeled samples");
            for (std::size_t k = 0; k < cfg.batch_unlabeled; ++k)
                b.unlabeled2.push_back(rng.uniform_int(split.unlabeled_target.size()));
        }
    }
    return b;
}

struct StepRecord {
    LossBreakdown losses;
    double q_mean = 0.0;  // mean pseudo-label quality over this step's recipients
    double lr = 0.0;      // warmup-scaled encoder rate
    std::size_t tape_records = 0;
    std::size_t teacher_forwards = 0;
    std::size_t student_forwards = 0;
};

template <typename T>
struct TrainerState {
    TrainConfig cfg;
    const DatasetSplit* data = nullptr;
    Params<T> student;
    TeacherState<T> teacher;
    AdamW<T> opt;
    Rng rng;
    std::size_t step = 0;
    std::size_t degenerate_masks = 0;  // single-class donors seen so far

    std::ostream* progress = nullptr;
};

template <typename T>
TrainerState<T> make_trainer(const TrainConfig& cfg, const DatasetSplit& data) {
    cfg.validate();
    TrainerState<T> st;
    st.cfg = cfg;
    st.data = &data;
    Arch arch;
    arch.num_classes = data.num_classes;
    st.student = init_params<T>(cfg.seed, arch);
    st.teacher = make_teacher(st.student, cfg.alpha, cfg.tau);
    st.opt = AdamW<T>(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    st.rng = Rng(seed_combine(cfg.seed, seed_tag("train")));
    return st;
}

namespace detail {

template <typename T>
Tensor<T> to_precision(const Tensor<float>& img) {
    Tensor<T> out;
    out.shape = img.shape;
    if constexpr (std::is_same_v<T, float>)
        out.data = img.data;
    else
        out.data.assign(img.data.begin(), img.data.end());
    return out;
}

template <typename T>
Tensor<T> stack_images(std::span<const Tensor<float>* const> images) {
    const auto& first = *images[0];
    Tensor<T> out({images.size(), first.dim(0), first.dim(1), first.dim(2)});
    std::size_t off = 0;
    for (const Tensor<float>* img : images) {
        if (img->shape != first.shape) throw ConfigError("batch images must share a shape");
        for (float v : img->data) out.data[off++] = static_cast<T>(v);
    }
    return out;
}

inline void dump_batch(const std::filesystem::path& dir, std::span<const Tensor<float>> images,
                       std::span<const LabelMap> labels) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) return;
    for (std::size_t i = 0; i < images.size(); ++i) {
        write_ppm(dir / (sample_stem(static_cast<int>(i)) + ".ppm"), images[i]);
        if (i < labels.size()) write_pgm(dir / (sample_stem(static_cast<int>(i)) + ".pgm"), labels[i]);
    }
}

}  // namespace detail

// One training iteration: teacher pseudo-labels on clean unlabeled images,
// mixed-batch construction, the four-stream forward, weighted backward,
// AdamW with warmup, then the teacher EMA update.
template <typename T>
StepRecord train_step(TrainerState<T>& st, const std::string& abort_dump_dir = "") {
    const TrainConfig& cfg = st.cfg;
    const DatasetSplit& data = *st.data;
    const bool en_inter = cfg.inter_enabled();
    const bool en_intra = cfg.intra_enabled();

    BatchIndices bi = sample_batch(data, cfg, st.step, st.rng);

    // Teacher pass, exactly once per distinct unlabeled image in this batch.
    std::map<std::size_t, PseudoLabel> pseudo_by_idx;
    std::size_t teacher_forwards = 0;
    double q_sum = 0.0;
    std::size_t q_count = 0;
    if (en_inter || en_intra) {
        auto teach = [&](std::size_t idx) {
            if (pseudo_by_idx.count(idx)) return;
            pseudo_by_idx.emplace(idx, pseudo_label(st.teacher, detail::to_precision<T>(
                                                                     data.unlabeled_target[idx].image)));
            ++teacher_forwards;
        };
        for (std::size_t idx : bi.unlabeled) teach(idx);
        for (std::size_t idx : bi.unlabeled2) teach(idx);
        for (std::size_t idx : bi.unlabeled) {
            q_sum += pseudo_by_idx.at(idx).quality;
            ++q_count;
        }
        for (std::size_t idx : bi.unlabeled2) {
            q_sum += pseudo_by_idx.at(idx).quality;
            ++q_count;
        }
    }

    // Mixed batches, one compose call per unlabeled slot.
    std::vector<MixedBatch> mixed;
    if (en_inter || en_intra) {
        for (std::size_t k = 0; k < bi.unlabeled.size(); ++k) {
            // A donor that belongs to a disabled stream is never read by
            // compose_strategy; the recipient stands in for it.
            const Sample& fallback = data.unlabeled_target[bi.unlabeled[k]];
            const Sample& donor_src =
                bi.source.empty() ? fallback : data.source[bi.source[k % bi.source.size()]];
            const Sample& donor_lbl = bi.labeled.empty()
                                          ? fallback
                                          : data.labeled_target[bi.labeled[k % bi.labeled.size()]];
            std::vector<Sample> recips{data.unlabeled_target[bi.unlabeled[k]]};
            std::vector<PseudoLabel> touts{pseudo_by_idx.at(bi.unlabeled[k])};
            if (cfg.strategy == Strategy::TwoXuTwoStreams) {
                recips.push_back(data.unlabeled_target[bi.unlabeled2[k]]);
                touts.push_back(pseudo_by_idx.at(bi.unlabeled2[k]));
            }
            auto slot = compose_strategy(cfg.strategy, donor_src, donor_lbl, recips, touts,
                                         st.rng, en_inter, en_intra);
            for (auto& mb : slot) mixed.push_back(std::move(mb));
        }
        for (const auto& mb : mixed) {
            bool all = true;
            for (auto b : mb.label.v)
                if (b != mb.label.v[0]) { all = false; break; }
            if (all && ++st.degenerate_masks == 1 && st.progress)
                *st.progress << "warning: single-class donor pasted a whole image\n";
        }
        if (!cfg.dump_mixed.empty()) {
            std::filesystem::create_directories(cfg.dump_mixed);
            for (std::size_t i = 0; i < mixed.size(); ++i) {
                const MixedBatch& mb = mixed[i];
                const char* kind = mb.kind == StreamKind::Inter   ? "inter"
                                   : mb.kind == StreamKind::Intra ? "intra"
                                                                  : "combined";
                char stem[64];
                std::snprintf(stem, sizeof stem, "step%05zu_mix%zu_%s", st.step + 1, i, kind);
                const std::filesystem::path dir(cfg.dump_mixed);
                write_ppm(dir / (std::string(stem) + ".ppm"), mb.image);
                write_pgm(dir / (std::string(stem) + ".pgm"), mb.label);
                LabelMap mask_img(mb.mask.h, mb.mask.w);
                for (std::size_t k = 0; k < mb.mask.v.size(); ++k)
                    mask_img.v[k] = mb.mask.v[k] ? 255 : 0;
                write_pgm(dir / (std::string(stem) + "_mask.pgm"), mask_img);
            }
        }
    }

    // Forward and losses on one tape.
    Tape<T> tape;
    StagedParams<T> sp = stage_params(tape, st.student);
    StreamLosses<T> streams;
    std::size_t student_forwards = 0;

    auto supervised_stream = [&](const std::vector<std::size_t>& idx,
                                 const std::vector<Sample>& pool) {
        std::vector<const Tensor<float>*> imgs;
        std::vector<LabelMap> labels;
        for (std::size_t i : idx) {
            imgs.push_back(&pool[i].image);
            labels.push_back(pool[i].label);
        }
        auto x = tape.leaf(detail::stack_images<T>(imgs));
        auto logits = forward(tape, sp, x);
        ++student_forwards;
        return ce_loss(tape, logits, labels, T(1));
    };
    if (cfg.use_ls) streams.l_s = supervised_stream(bi.source, data.source);
    if (cfg.use_lt) streams.l_t = supervised_stream(bi.labeled, data.labeled_target);

    double lambda_eff = cfg.lambda, mu_eff = cfg.mu;
    auto mixed_stream = [&](StreamKind kind) -> std::optional<typename Tape<T>::NodeId> {
        std::optional<typename Tape<T>::NodeId> acc;
        std::size_t n = 0;
        for (const MixedBatch& mb : mixed) {
            if (mb.kind != kind) continue;
            std::vector<const Tensor<float>*> one{&mb.image};
            auto x = tape.leaf(detail::stack_images<T>(one));
            auto logits = forward(tape, sp, x);
            ++student_forwards;
            std::vector<LabelMap> labels{mb.label};
            auto l = ce_loss(tape, logits, labels, static_cast<T>(mb.quality));
            acc = acc ? add(tape, *acc, l) : l;
            ++n;
        }
        if (acc && n > 1) acc = scale(tape, *acc, T(1) / static_cast<T>(n));
        return acc;
    };
    streams.l_inter = mixed_stream(StreamKind::Inter);
    streams.l_intra = mixed_stream(StreamKind::Intra);
    if (auto combined = mixed_stream(StreamKind::Combined)) {
        // The single fused stream replaces both weighted terms; it enters the
        // total with the average of the two weights.
        streams.l_inter = combined;
        lambda_eff = 0.5 * (cfg.lambda + cfg.mu);
        mu_eff = 0.0;
    }

    auto [total, bd] = total_loss(tape, streams, static_cast<T>(lambda_eff),
                                  static_cast<T>(mu_eff));

    if (!std::isfinite(bd.total)) {
        if (!abort_dump_dir.empty()) {
            std::vector<Tensor<float>> imgs;
            std::vector<LabelMap> labels;
            for (const auto& mb : mixed) {
                imgs.push_back(mb.image);
                labels.push_back(mb.label);
            }
            detail::dump_batch(abort_dump_dir, imgs, labels);
        }
        throw RuntimeAbort("non-finite loss at step " + std::to_string(st.step + 1) +
                           (abort_dump_dir.empty() ? "" : "; offending batch dumped to " +
                                                              abort_dump_dir));
    }

    tape.backward(total);

    // Optimizer update: encoder rate everywhere, 10x-style head rate on the
    // classification head, both warmup-scaled.
    const double ramp = warmup_lr(st.step, 1.0, cfg.warmup_iters);
    std::vector<double> lrs(st.student.tensors.size());
    for (std::size_t i = 0; i < lrs.size(); ++i)
        lrs[i] = ramp * (st.student.is_head(i) ? cfg.lr_head : cfg.lr_encoder);
    st.opt.step(st.student, lrs);
    for (auto& t : st.student.tensors) t.value.grad.clear();

    ema_update(st.teacher, st.student);
    ++st.step;

    StepRecord rec;
    rec.losses = bd;
    rec.q_mean = q_count ? q_sum / static_cast<double>(q_count) : 0.0;
    rec.lr = ramp * cfg.lr_encoder;
    rec.tape_records = tape.size();
    rec.teacher_forwards = teacher_forwards;
    rec.student_forwards = student_forwards;
    return rec;
}

struct RunReport {
    double final_miou = 0.0;
    double best_miou = 0.0;
    std::vector<double> final_per_class;
    std::string metrics_csv;
    std::string best_checkpoint;
    std::string final_checkpoint;
    double seconds = 0.0;
    std::size_t iters = 0;
};

namespace detail {

inline std::string csv_num(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace detail

// Full training run: periodic evaluation on eval_target, metrics CSV, best
// and final checkpoints. Deterministic given (config, dataset).
template <typename T>
RunReport run(const TrainConfig& cfg, const DatasetSplit& data, const std::string& out_dir = "",
              std::ostream* progress = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainerState<T> st = make_trainer<T>(cfg, data);
    st.progress = progress;

    std::ofstream csv;
    std::filesystem::path out(out_dir);
    std::string abort_dir;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out);
        csv.open(out / "metrics.csv");
        if (!csv) throw RuntimeAbort("cannot write metrics.csv in " + out_dir);
        csv << "step,l_s,l_t,l_inter,l_intra,total,q_mean,lr,eval_miou\n";
        abort_dir = (out / "abort").string();
    }

    RunReport report;
    report.iters = cfg.iters;

    auto evaluate = [&]() { return evaluate_model(st.student, std::span(data.eval_target)); };
    auto note = [&](std::size_t step, double miou) {
        if (progress)
            *progress << "step " << step << "/" << cfg.iters << "  eval mIoU "
                      << detail::csv_num(100.0 * miou) << "  best "
                      << detail::csv_num(100.0 * report.best_miou) << "\n";
    };

    IouReport ev = evaluate();
    report.best_miou = ev.mean;
    report.final_miou = ev.mean;
    report.final_per_class = ev.per_class;
    if (csv.is_open()) csv << "0,,,,,,,," << detail::csv_num(ev.mean) << "\n";
    if (!out_dir.empty()) {
        save_checkpoint((out / "checkpoint_best.bin").string(), st.student, CheckpointRole::student);
        report.best_checkpoint = (out / "checkpoint_best.bin").string();
    }
    note(0, ev.mean);

    for (std::size_t i = 0; i < cfg.iters; ++i) {
        StepRecord rec = train_step(st, abort_dir);
        const bool eval_now = ((i + 1) % cfg.eval_every == 0) || (i + 1 == cfg.iters);
        std::string eval_cell;
        if (eval_now) {
            ev = evaluate();
            eval_cell = detail::csv_num(ev.mean);
            report.final_miou = ev.mean;
            report.final_per_class = ev.per_class;
            if (ev.mean > report.best_miou) {
                report.best_miou = ev.mean;
                if (!out_dir.empty())
                    save_checkpoint((out / "checkpoint_best.bin").string(), st.student,
                                    CheckpointRole::student);
            }
            note(i + 1, ev.mean);
        }
        if (csv.is_open()) {
            csv << (i + 1) << ',' << detail::csv_num(rec.losses.l_s) << ','
                << detail::csv_num(rec.losses.l_t) << ',' << detail::csv_num(rec.losses.l_inter)
                << ',' << detail::csv_num(rec.losses.l_intra) << ','
                << detail::csv_num(rec.losses.total) << ',' << detail::csv_num(rec.q_mean) << ','
                << detail::csv_num(rec.lr) << ',' << eval_cell << "\n";
        }
    }

    if (!out_dir.empty()) {
        save_checkpoint((out / "checkpoint_final.bin").string(), st.student,
                        CheckpointRole::student);
        save_checkpoint((out / "checkpoint_teacher.bin").string(), st.teacher.params,
                        CheckpointRole::teacher);
        report.final_checkpoint = (out / "checkpoint_final.bin").string();
        report.metrics_csv = (out / "metrics.csv").string();
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace mixseg
