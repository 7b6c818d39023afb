#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mixseg/labelmap.hpp"
#include "mixseg/rng.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

// Class ids: 0 background, 1 circle, 2 square, 3 triangle, 4 stripe-bar.
constexpr std::size_t kNumClasses = 5;
inline const char* class_name(std::size_t c) {
    static const char* names[] = {"background", "circle", "square", "triangle", "stripe-bar"};
    return c < kNumClasses ? names[c] : "?";
}

// Appearance parameters of one rendering domain. Paired source/target specs
// share the geometry RNG stream and differ only in appearance, so the domain
// shift is purely an appearance shift. The *_jitter and *_lo/_hi fields vary
// per image: a domain is a distribution over appearances, not a single look,
// and a handful of labeled images cannot cover it.
struct DomainSpec {
    std::string name = "source";
    Domain domain = Domain::source;
    std::size_t image_size = 48;
    std::array<std::array<float, 3>, kNumClasses> palette{};
    float palette_jitter = 0.04f;  // per-image, per-class, per-channel offset half-range
    float brightness = 0.0f;
    float brightness_jitter = 0.05f;  // per-image offset half-range
    float noise_sigma_lo = 0.02f;     // per-image pixel noise sigma range
    float noise_sigma_hi = 0.05f;
    float texture_freq_lo = 0.15f;  // background texture, cycles per pixel
    float texture_freq_hi = 0.30f;
    float texture_amp = 0.05f;
    float stripe_period = 3.0f;  // internal banding of the stripe-bar class
    float stripe_amp = 0.08f;
    float shape_jitter = 0.04f;  // per-shape brightness jitter half-range
    std::uint64_t appearance_salt = 0;
};

DomainSpec toyshift_source_spec(std::size_t image_size = 48);
DomainSpec toyshift_target_spec(std::size_t image_size = 48);

// One scene shape; kind doubles as the class id (1..4).
struct SceneShape {
    int kind = 1;
    double cx = 0, cy = 0;
    double a = 0;      // circle radius / square half-side / triangle size / bar half-length
    double b = 0;      // bar half-width
    double theta = 0;  // bar orientation
};

struct Scene {
    std::vector<SceneShape> shapes;
};

struct Sample {
    Tensor<float> image;  // [3,H,W], values in [0,1]
    LabelMap label;
    Domain domain = Domain::source;
    int id = 0;
};

namespace detail {

inline bool shape_contains(const SceneShape& s, double px, double py) {
    const double dx = px - s.cx, dy = py - s.cy;
    switch (s.kind) {
        case 1:  // circle
            return dx * dx + dy * dy <= s.a * s.a;
        case 2:  // square
            return std::abs(dx) <= s.a && std::abs(dy) <= s.a;
        case 3: {  // triangle: apex up, base 0.9a wide at 0.75a below center
            const double ax = s.cx, ay = s.cy - s.a;
            const double bx = s.cx - 0.9 * s.a, by = s.cy + 0.75 * s.a;
            const double cx2 = s.cx + 0.9 * s.a, cy2 = s.cy + 0.75 * s.a;
            const double d1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            const double d2 = (cx2 - bx) * (py - by) - (cy2 - by) * (px - bx);
            const double d3 = (ax - cx2) * (py - cy2) - (ay - cy2) * (px - cx2);
            const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
            const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
            return !(neg && pos);
        }
        case 4: {  // bar
            const double c = std::cos(s.theta), sn = std::sin(s.theta);
            const double u = c * dx + sn * dy;
            const double v = -sn * dx + c * dy;
            return std::abs(u) <= s.a && std::abs(v) <= s.b;
        }
        default:
            return false;
    }
}

inline double circumradius(const SceneShape& s) {
    switch (s.kind) {
        case 1: return s.a;
        case 2: return s.a * 1.4142135623730951;
        case 3: return s.a * 1.2;
        case 4: return std::sqrt(s.a * s.a + s.b * s.b);
        default: return s.a;
    }
}

}  // namespace detail

// 1-3 shapes with rejection sampling against overlap; a shape that cannot be
// placed after 30 tries is dropped (the first always fits).
inline Scene sample_geometry(std::size_t image_size, Rng& rng) {
    const double sz = static_cast<double>(image_size);
    const double sc = sz / 48.0;
    Scene scene;
    const int want = 1 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < want; ++i) {
        for (int attempt = 0; attempt < 30; ++attempt) {
            SceneShape s;
            s.kind = 1 + static_cast<int>(rng.uniform_int(4));
            switch (s.kind) {
                case 1: s.a = std::max(2.5, rng.uniform(5.0, 10.0) * sc); break;
                case 2: s.a = std::max(2.0, rng.uniform(4.0, 8.0) * sc); break;
                case 3: s.a = std::max(3.0, rng.uniform(5.0, 9.0) * sc); break;
                case 4:
                    s.a = std::max(4.0, rng.uniform(8.0, 14.0) * sc);
                    s.b = std::max(1.5, rng.uniform(2.0, 3.5) * sc);
                    s.theta = rng.uniform(0.0, 3.141592653589793);
                    break;
            }
            const double r = detail::circumradius(s);
            const double m = std::min(0.7 * r, sz / 2.0 - 1.0);
            s.cx = rng.uniform(m, sz - m);
            s.cy = rng.uniform(m, sz - m);
            bool ok = true;
            for (const auto& other : scene.shapes) {
                const double dx = s.cx - other.cx, dy = s.cy - other.cy;
                const double need = r + detail::circumradius(other) + 1.0;
                if (dx * dx + dy * dy < need * need) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                scene.shapes.push_back(s);
                break;
            }
        }
    }
    return scene;
}

// Exact rasterization at pixel centers; shape order decides nothing because
// shapes do not overlap.
inline LabelMap rasterize(const Scene& scene, std::size_t image_size) {
    LabelMap lbl(image_size, image_size, 0);
    for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            for (const auto& s : scene.shapes)
                if (detail::shape_contains(s, px, py)) {
                    lbl.at(y, x) = static_cast<std::uint8_t>(s.kind);
                    break;
                }
        }
    return lbl;
}

inline Tensor<float> render(const Scene& scene, const LabelMap& label,
                            const DomainSpec& spec, Rng& app) {
    const std::size_t S = spec.image_size;
    Tensor<float> img({3, S, S});

    // per-image appearance draws, in fixed order
    const double brightness =
        spec.brightness + app.uniform(-spec.brightness_jitter, spec.brightness_jitter);
    const double sigma = app.uniform(spec.noise_sigma_lo, spec.noise_sigma_hi);
    const double tex_freq = app.uniform(spec.texture_freq_lo, spec.texture_freq_hi);
    const double tex_dir = app.uniform(0.0, 6.283185307179586);
    const double tex_phase = app.uniform(0.0, 6.283185307179586);
    double palette[kNumClasses][3];
    for (std::size_t c = 0; c < kNumClasses; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch)
            palette[c][ch] = spec.palette[c][ch] +
                             app.uniform(-spec.palette_jitter, spec.palette_jitter);
    const double ux = std::cos(tex_dir), uy = std::sin(tex_dir);
    std::vector<double> jitter(scene.shapes.size());
    for (auto& j : jitter) j = app.uniform(-spec.shape_jitter, spec.shape_jitter);

    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            const std::uint8_t cls = label.at(y, x);
            const double px = x + 0.5, py = y + 0.5;
            double base_mod = 0.0;
            if (cls == 0) {
                base_mod = spec.texture_amp *
                           std::sin(6.283185307179586 * tex_freq * (ux * px + uy * py) +
                                    tex_phase);
            } else {
                for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
                    const auto& s = scene.shapes[i];
                    if (static_cast<std::uint8_t>(s.kind) != cls ||
                        !detail::shape_contains(s, px, py))
                        continue;
                    base_mod = jitter[i];
                    if (s.kind == 4) {
                        const double u = std::cos(s.theta) * (px - s.cx) +
                                         std::sin(s.theta) * (py - s.cy);
                        const long band = static_cast<long>(std::floor(u / spec.stripe_period));
                        base_mod += (band & 1) ? spec.stripe_amp : -spec.stripe_amp;
                    }
                    break;
                }
            }
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double v = palette[cls][ch] + base_mod + brightness + app.normal(0.0, sigma);
                img.at3(ch, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    return img;
}

// Deterministic per (spec, seed, id). The geometry stream ignores the
// appearance salt, so paired specs with the same seed produce identical
// labels and differ only in pixels.
inline Sample generate_sample(const DomainSpec& spec, std::uint64_t seed, int id) {
    Rng geo(seed_combine(seed_combine(seed, seed_tag("geometry")), static_cast<std::uint64_t>(id)));
    Rng app(seed_combine(seed_combine(seed_combine(seed, seed_tag("appearance")),
                                      spec.appearance_salt),
                         static_cast<std::uint64_t>(id)));
    Sample s;
    const Scene scene = sample_geometry(spec.image_size, geo);
    s.label = rasterize(scene, spec.image_size);
    s.image = render(scene, s.label, spec, app);
    s.domain = spec.domain;
    s.id = id;
    return s;
}

inline std::vector<Sample> generate_domain(const DomainSpec& spec, int count,
                                           std::uint64_t seed) {
    if (count <= 0) throw ConfigError("sample count must be positive");
    std::vector<Sample> out;
    out.reserve(count);
    for (int id = 0; id < count; ++id) out.push_back(generate_sample(spec, seed, id));
    return out;
}

inline DomainSpec toyshift_source_spec(std::size_t image_size) {
    DomainSpec s;
    s.name = "source";
    s.domain = Domain::source;
    s.image_size = image_size;
    s.palette = {{{0.36f, 0.46f, 0.20f},    // background: olive
                  {0.85f, 0.16f, 0.10f},    // circle: red
                  {0.12f, 0.25f, 0.80f},    // square: blue
                  {0.93f, 0.83f, 0.15f},    // triangle: yellow
                  {0.78f, 0.16f, 0.74f}}};  // stripe-bar: magenta
    s.palette_jitter = 0.04f;
    s.brightness = 0.05f;
    s.brightness_jitter = 0.05f;
    s.noise_sigma_lo = 0.02f;
    s.noise_sigma_hi = 0.05f;
    s.texture_freq_lo = 0.15f;
    s.texture_freq_hi = 0.30f;
    s.texture_amp = 0.05f;
    s.stripe_period = 3.0f;
    s.stripe_amp = 0.08f;
    s.shape_jitter = 0.04f;
    s.appearance_salt = seed_tag("appearance:source");
    return s;
}

// The target domain is hue-shifted and darker than the source, and its
// per-image appearance spread is wide, so a handful of labeled images
// cannot stand in for the whole domain.
inline DomainSpec toyshift_target_spec(std::size_t image_size) {
    DomainSpec s;
    s.name = "target";
    s.domain = Domain::target;
    s.image_size = image_size;
    s.palette = {{{0.24f, 0.30f, 0.41f},    // background: slate
                  {0.55f, 0.27f, 0.30f},    // circle: brick
                  {0.26f, 0.47f, 0.55f},    // square: teal
                  {0.58f, 0.54f, 0.28f},    // triangle: ochre
                  {0.48f, 0.30f, 0.56f}}};  // stripe-bar: violet
    s.palette_jitter = 0.10f;
    s.brightness = -0.04f;
    s.brightness_jitter = 0.12f;
    s.noise_sigma_lo = 0.04f;
    s.noise_sigma_hi = 0.11f;
    s.texture_freq_lo = 0.35f;
    s.texture_freq_hi = 0.80f;
    s.texture_amp = 0.07f;
    s.stripe_period = 4.0f;
    s.stripe_amp = 0.06f;
    s.shape_jitter = 0.05f;
    s.appearance_salt = seed_tag("appearance:target");
    return s;
}

// The three target-domain pools plus the source pool. Labels of
// unlabeled_target samples are withheld (all-ignore); the true maps are kept
// aside for diagnostics only.
struct DatasetSplit {
    std::vector<Sample> source;
    std::vector<Sample> labeled_target;
    std::vector<Sample> unlabeled_target;
    std::vector<Sample> eval_target;
    std::vector<LabelMap> unlabeled_true_labels;  // parallel to unlabeled_target; may be empty
    std::size_t num_classes = kNumClasses;
    std::size_t image_size = 48;
};

// Uniform random subset of size n_labeled keeps its labels; the rest have
// them withheld. Sample ids are preserved.
inline void split_target(const std::vector<Sample>& samples, std::size_t n_labeled,
                         std::uint64_t seed, DatasetSplit& out) {
    if (n_labeled == 0 || n_labeled >= samples.size())
        throw ConfigError("n_labeled must satisfy 0 < n_labeled < " +
                          std::to_string(samples.size()));
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed_combine(seed, seed_tag("split")));
    for (std::size_t i = idx.size() - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
    std::vector<char> labeled(samples.size(), 0);
    for (std::size_t i = 0; i < n_labeled; ++i) labeled[idx[i]] = 1;

    out.labeled_target.clear();
    out.unlabeled_target.clear();
    out.unlabeled_true_labels.clear();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (labeled[i]) {
            out.labeled_target.push_back(samples[i]);
        } else {
            Sample s = samples[i];
            out.unlabeled_true_labels.push_back(s.label);
            s.label = LabelMap(s.label.h, s.label.w, LabelMap::kIgnore);
            out.unlabeled_target.push_back(std::move(s));
        }
    }
}

struct ToyShiftConfig {
    std::uint64_t seed = 0;
    int n_source = 500;
    int n_target = 500;
    int n_labeled = 8;
    int n_eval = 100;
    std::size_t image_size = 48;
};

struct GeneratedDataset {
    DatasetSplit split;
    ToyShiftConfig cfg;
    DomainSpec source_spec;
    DomainSpec target_spec;
};

inline GeneratedDataset generate_toyshift(const ToyShiftConfig& cfg) {
    if (cfg.n_source <= 0 || cfg.n_target <= 0 || cfg.n_eval <= 0)
        throw ConfigError("dataset pool sizes must be positive");
    GeneratedDataset d;
    d.cfg = cfg;
    d.source_spec = toyshift_source_spec(cfg.image_size);
    d.target_spec = toyshift_target_spec(cfg.image_size);
    d.split.num_classes = kNumClasses;
    d.split.image_size = cfg.image_size;
    d.split.source = generate_domain(d.source_spec, cfg.n_source,
                                     seed_combine(cfg.seed, seed_tag("pool:source")));
    const auto target_train = generate_domain(
        d.target_spec, cfg.n_target, seed_combine(cfg.seed, seed_tag("pool:target")));
    split_target(target_train, cfg.n_labeled, cfg.seed, d.split);
    d.split.eval_target = generate_domain(d.target_spec, cfg.n_eval,
                                          seed_combine(cfg.seed, seed_tag("pool:eval")));
    return d;
}

}  // namespace mixseg
