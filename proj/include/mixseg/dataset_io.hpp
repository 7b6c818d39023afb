#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mixseg/data.hpp"
#include "mixseg/image_io.hpp"

namespace mixseg {

namespace fs = std::filesystem;

// On-disk layout:
//   <dir>/manifest.txt
//   <dir>/{source,target_labeled,target_unlabeled,target_eval}/NNNN.img  (binary tensor)
//                                                              NNNN.ppm  (inspection copy)
//                                                              NNNN.pgm  (label; omitted for
//                                                                         target_unlabeled unless
//                                                                         hidden labels requested)

inline std::string sample_stem(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", id);
    return buf;
}

namespace detail {

inline void save_pool(const fs::path& dir, const std::vector<Sample>& pool, bool labels) {
    fs::create_directories(dir);
    for (const Sample& s : pool) {
        const std::string stem = sample_stem(s.id);
        write_tensor_file(dir / (stem + ".img"), s.image);
        write_ppm(dir / (stem + ".ppm"), s.image);
        if (labels) write_pgm(dir / (stem + ".pgm"), s.label);
    }
}

inline std::vector<Sample> load_pool(const fs::path& dir, Domain domain, bool expect_labels,
                                     std::size_t image_size) {
    std::vector<Sample> pool;
    std::vector<fs::path> imgs;
    if (!fs::is_directory(dir)) throw RuntimeAbort("missing dataset directory " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".img") imgs.push_back(e.path());
    std::sort(imgs.begin(), imgs.end());
    for (const auto& p : imgs) {
        Sample s;
        s.image = read_tensor_file(p);
        if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dim(1) != image_size ||
            s.image.dim(2) != image_size)
            throw RuntimeAbort("unexpected image shape in " + p.string());
        s.id = std::stoi(p.stem().string());
        s.domain = domain;
        const fs::path lblp = fs::path(p).replace_extension(".pgm");
        if (fs::exists(lblp)) {
            s.label = read_pgm(lblp);
            if (s.label.h != image_size || s.label.w != image_size)
                throw RuntimeAbort("label size mismatch in " + lblp.string());
        } else if (expect_labels) {
            throw RuntimeAbort("missing label file " + lblp.string());
        } else {
            s.label = LabelMap(image_size, image_size, LabelMap::kIgnore);
        }
        pool.push_back(std::move(s));
    }
    return pool;
}

inline std::string fmt_float(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

inline void manifest_spec(std::ostream& os, const std::string& prefix, const DomainSpec& s) {
    os << prefix << ".name = " << s.name << "\n";
    std::ostringstream pal;
    for (std::size_t c = 0; c < kNumClasses; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch)
            pal << (c + ch ? "," : "") << fmt_float(s.palette[c][ch]);
    os << prefix << ".palette = " << pal.str() << "\n";
    os << prefix << ".palette_jitter = " << fmt_float(s.palette_jitter) << "\n";
    os << prefix << ".brightness = " << fmt_float(s.brightness) << "\n";
    os << prefix << ".brightness_jitter = " << fmt_float(s.brightness_jitter) << "\n";
    os << prefix << ".noise_sigma = " << fmt_float(s.noise_sigma_lo) << "," << fmt_float(s.noise_sigma_hi) << "\n";
    os << prefix << ".texture_freq = " << fmt_float(s.texture_freq_lo) << "," << fmt_float(s.texture_freq_hi) << "\n";
    os << prefix << ".texture_amp = " << fmt_float(s.texture_amp) << "\n";
    os << prefix << ".stripe_period = " << fmt_float(s.stripe_period) << "\n";
    os << prefix << ".stripe_amp = " << fmt_float(s.stripe_amp) << "\n";
    os << prefix << ".shape_jitter = " << fmt_float(s.shape_jitter) << "\n";
}

}  // namespace detail

inline void save_dataset(const GeneratedDataset& d, const fs::path& dir,
                         bool with_hidden_labels = false) {
    fs::create_directories(dir);
    detail::save_pool(dir / "source", d.split.source, true);
    detail::save_pool(dir / "target_labeled", d.split.labeled_target, true);
    detail::save_pool(dir / "target_eval", d.split.eval_target, true);

    if (with_hidden_labels) {
        std::vector<Sample> unl = d.split.unlabeled_target;
        for (std::size_t i = 0; i < unl.size(); ++i)
            unl[i].label = d.split.unlabeled_true_labels[i];
        detail::save_pool(dir / "target_unlabeled", unl, true);
    } else {
        detail::save_pool(dir / "target_unlabeled", d.split.unlabeled_target, false);
    }

    std::ofstream os(dir / "manifest.txt");
    if (!os) throw RuntimeAbort("cannot write manifest in " + dir.string());
    os << "format = toyshift-1\n";
    os << "seed = " << d.cfg.seed << "\n";
    os << "image_size = " << d.cfg.image_size << "\n";
    os << "num_classes = " << kNumClasses << "\n";
    os << "n_source = " << d.cfg.n_source << "\n";
    os << "n_target = " << d.cfg.n_target << "\n";
    os << "n_labeled = " << d.cfg.n_labeled << "\n";
    os << "n_eval = " << d.cfg.n_eval << "\n";
    os << "hidden_labels = " << (with_hidden_labels ? "true" : "false") << "\n";
    detail::manifest_spec(os, "source", d.source_spec);
    detail::manifest_spec(os, "target", d.target_spec);
}

inline std::map<std::string, std::string> read_key_value_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw RuntimeAbort("cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        const auto e = s.find_last_not_of(" \t\r\n");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

inline DatasetSplit load_dataset(const fs::path& dir) {
    const auto kv = read_key_value_file(dir / "manifest.txt");
    auto need = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end())
            throw RuntimeAbort("manifest " + (dir / "manifest.txt").string() + " missing key " + k);
        return it->second;
    };
    if (need("format") != "toyshift-1")
        throw RuntimeAbort("unsupported dataset format in " + dir.string());
    DatasetSplit split;
    split.image_size = std::stoul(need("image_size"));
    split.num_classes = std::stoul(need("num_classes"));
    split.source = detail::load_pool(dir / "source", Domain::source, true, split.image_size);
    split.labeled_target =
        detail::load_pool(dir / "target_labeled", Domain::target, true, split.image_size);
    split.unlabeled_target =
        detail::load_pool(dir / "target_unlabeled", Domain::target, false, split.image_size);
    split.eval_target =
        detail::load_pool(dir / "target_eval", Domain::target, true, split.image_size);
    // Hidden labels, when exported, ride along on the unlabeled samples; move
    // them aside so the trainer never sees them.
    if (need("hidden_labels") == "true") {
        for (auto& s : split.unlabeled_target) {
            split.unlabeled_true_labels.push_back(s.label);
            s.label = LabelMap(s.label.h, s.label.w, LabelMap::kIgnore);
        }
    }
    return split;
}

}  // namespace mixseg
