#pragma once

#include <filesystem>
#include <fstream>

#include "mixseg/image_io.hpp"
#include "mixseg/model.hpp"

namespace mixseg {

enum class CheckpointRole : std::uint8_t { student = 0, teacher = 1 };

inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

// Little-endian binary: magic, role, architecture descriptor, then each
// named tensor as (name length, name, rank, dims, raw f32 values). Values
// are stored as f32 regardless of the training precision.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Params<T>& params,
                     CheckpointRole role) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeAbort("cannot open " + path.string() + " for writing");
    os.write(kCheckpointMagic, 8);
    os.put(static_cast<char>(role));
    detail::write_u32(os, static_cast<std::uint32_t>(params.arch.in_channels));
    detail::write_u32(os, static_cast<std::uint32_t>(params.arch.hidden.size()));
    for (std::size_t h : params.arch.hidden) detail::write_u32(os, static_cast<std::uint32_t>(h));
    detail::write_u32(os, static_cast<std::uint32_t>(params.arch.num_classes));
    detail::write_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& nt : params.tensors) {
        detail::write_u32(os, static_cast<std::uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(nt.value.rank()));
        for (std::size_t d : nt.value.shape)
            detail::write_u32(os, static_cast<std::uint32_t>(d));
        for (T v : nt.value.data) detail::write_f32(os, static_cast<float>(v));
    }
    if (!os) throw RuntimeAbort("write failed for " + path.string());
}

template <typename T>
Params<T> load_checkpoint(const std::filesystem::path& path, CheckpointRole* role_out = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeAbort("cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw RuntimeAbort("bad checkpoint magic in " + path.string());
    const int role = is.get();
    if (role != 0 && role != 1) throw RuntimeAbort("bad checkpoint role in " + path.string());
    if (role_out) *role_out = static_cast<CheckpointRole>(role);

    Params<T> p;
    p.arch.in_channels = detail::read_u32(is, path.string());
    const std::uint32_t n_hidden = detail::read_u32(is, path.string());
    if (n_hidden > 64) throw RuntimeAbort("implausible layer count in " + path.string());
    p.arch.hidden.resize(n_hidden);
    for (auto& h : p.arch.hidden) h = detail::read_u32(is, path.string());
    p.arch.num_classes = detail::read_u32(is, path.string());

    const std::uint32_t n_tensors = detail::read_u32(is, path.string());
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::uint32_t name_len = detail::read_u32(is, path.string());
        if (name_len > 256) throw RuntimeAbort("implausible tensor name in " + path.string());
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw RuntimeAbort("truncated checkpoint " + path.string());
        const std::uint32_t rank = detail::read_u32(is, path.string());
        if (rank > 8) throw RuntimeAbort("implausible tensor rank in " + path.string());
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_u32(is, path.string());
        Tensor<T> t(shape);
        for (auto& v : t.data) v = static_cast<T>(detail::read_f32(is, path.string()));
        t.requires_grad = true;
        p.tensors.push_back({std::move(name), std::move(t)});
    }
    return p;
}

}  // namespace mixseg
