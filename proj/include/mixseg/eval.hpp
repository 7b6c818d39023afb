#pragma once

#include <iomanip>
#include <ostream>
#include <span>
#include <vector>

#include "mixseg/data.hpp"
#include "mixseg/model.hpp"

namespace mixseg {

// Rows are ground truth, columns are prediction. Ignored truth pixels are
// skipped, so the total count equals the number of evaluated pixels.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t C) : num_classes(C), counts(C * C, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) {
        return counts[truth * num_classes + pred];
    }
    std::uint64_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * num_classes + pred];
    }

    void accumulate(const LabelMap& pred, const LabelMap& truth) {
        if (pred.h != truth.h || pred.w != truth.w)
            throw ConfigError("confusion: prediction/truth size mismatch");
        for (std::size_t i = 0; i < truth.v.size(); ++i) {
            const std::uint8_t t = truth.v[i];
            if (t == LabelMap::kIgnore) continue;
            if (t >= num_classes || pred.v[i] >= num_classes)
                throw ConfigError("confusion: label out of range");
            ++counts[t * num_classes + pred.v[i]];
        }
    }

    void merge(const ConfusionMatrix& other) {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }

    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }
};

struct IouReport {
    std::vector<double> per_class;  // valid entries only meaningful
    std::vector<bool> valid;        // false when the class is absent from pred and truth
    double mean = 0.0;
};

// IoU_c = diag / (row + col - diag); classes absent from both prediction and
// truth are excluded from the mean.
inline IouReport miou(const ConfusionMatrix& cm) {
    const std::size_t C = cm.num_classes;
    IouReport r;
    r.per_class.assign(C, 0.0);
    r.valid.assign(C, false);
    double sum = 0.0;
    std::size_t n_valid = 0;
    for (std::size_t c = 0; c < C; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t k = 0; k < C; ++k) {
            row += cm.at(c, k);
            col += cm.at(k, c);
        }
        const std::uint64_t diag = cm.at(c, c);
        const std::uint64_t denom = row + col - diag;
        if (denom == 0) continue;
        r.per_class[c] = static_cast<double>(diag) / static_cast<double>(denom);
        r.valid[c] = true;
        sum += r.per_class[c];
        ++n_valid;
    }
    if (n_valid == 0) throw RuntimeAbort("miou: no evaluated pixels");
    r.mean = sum / static_cast<double>(n_valid);
    return r;
}

// Runs the model over a pool and scores it against ground truth.
template <typename T>
IouReport evaluate_model(const Params<T>& params, std::span<const Sample> samples) {
    ConfusionMatrix cm(params.arch.num_classes);
    for (const Sample& s : samples) {
        Tensor<T> batched;
        batched.shape = {1, s.image.dim(0), s.image.dim(1), s.image.dim(2)};
        if constexpr (std::is_same_v<T, float>) {
            batched.data = s.image.data;
        } else {
            batched.data.assign(s.image.data.begin(), s.image.data.end());
        }
        cm.accumulate(predict(params, batched)[0], s.label);
    }
    return miou(cm);
}

inline void print_iou_table(std::ostream& os, const IouReport& r) {
    os << std::left << std::setw(12) << "class" << std::right << std::setw(8) << "IoU%" << "\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        os << std::left << std::setw(12) << class_name(c) << std::right << std::setw(8);
        if (r.valid[c])
            os << std::fixed << std::setprecision(2) << 100.0 * r.per_class[c];
        else
            os << "n/a";
        os << "\n";
    }
    os << std::left << std::setw(12) << "mIoU" << std::right << std::setw(8) << std::fixed
       << std::setprecision(2) << 100.0 * r.mean << "\n";
}

}  // namespace mixseg
