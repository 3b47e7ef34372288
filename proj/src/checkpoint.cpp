#include "advlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace advlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
int ParamStore<T>::add(std::string name, Tensor<T> value) {
    for (const Entry& e : entries_) {
        if (e.name == name) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    entries_.push_back(Entry{std::move(name), std::move(value)});
    return size() - 1;
}

template <typename T>
int ParamStore<T>::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return static_cast<int>(i);
    }
    throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint truncated");
    return v;
}

std::string get_bytes(std::istream& is, std::uint32_t n) {
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw std::runtime_error("checkpoint truncated");
    return s;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
    return sizeof(T) == 4 ? 0 : 1;
}

template <typename Stored, typename T>
std::vector<T> read_values(std::istream& is, std::size_t n) {
    std::vector<Stored> raw(n);
    if (n && !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(Stored)))) {
        throw std::runtime_error("checkpoint truncated");
    }
    return std::vector<T>(raw.begin(), raw.end());
}

} // namespace

template <typename T>
void write_checkpoint(std::ostream& os, const ParamStore<T>& params, const std::string& metadata) {
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(metadata.size()));
    os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params) {
        put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        const std::uint8_t dtype = dtype_code<T>();
        os.write(reinterpret_cast<const char*>(&dtype), 1);
        put_u32(os, static_cast<std::uint32_t>(e.value.rank()));
        for (int d : e.value.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(e.value.data()), static_cast<std::streamsize>(e.value.size() * sizeof(T)));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params, const std::string& metadata) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    write_checkpoint(os, params, metadata);
}

template <typename T>
ParamStore<T> read_checkpoint(std::istream& is, std::string* metadata) {
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw std::runtime_error("not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = get_u32(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    std::string meta = get_bytes(is, get_u32(is));
    if (metadata) *metadata = std::move(meta);
    const std::uint32_t count = get_u32(is);
    ParamStore<T> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_bytes(is, get_u32(is));
        std::uint8_t dtype = 0;
        if (!is.read(reinterpret_cast<char*>(&dtype), 1)) throw std::runtime_error("checkpoint truncated");
        const std::uint32_t ndim = get_u32(is);
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(get_u32(is)));
        const std::size_t n = numel(shape);
        std::vector<T> values;
        if (dtype == 0) values = read_values<float, T>(is, n);
        else if (dtype == 1) values = read_values<double, T>(is, n);
        else throw std::runtime_error("unknown dtype code " + std::to_string(dtype) + " for tensor '" + name + "'");
        out.add(std::move(name), Tensor<T>(std::move(shape), std::move(values)));
    }
    return out;
}

template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path, std::string* metadata) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    return read_checkpoint<T>(is, metadata);
}

template void write_checkpoint<float>(std::ostream&, const ParamStore<float>&, const std::string&);
template void write_checkpoint<double>(std::ostream&, const ParamStore<double>&, const std::string&);
template void save_checkpoint<float>(const std::filesystem::path&, const ParamStore<float>&, const std::string&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParamStore<double>&, const std::string&);
template ParamStore<float> read_checkpoint<float>(std::istream&, std::string*);
template ParamStore<double> read_checkpoint<double>(std::istream&, std::string*);
template ParamStore<float> load_checkpoint<float>(const std::filesystem::path&, std::string*);
template ParamStore<double> load_checkpoint<double>(const std::filesystem::path&, std::string*);

} // namespace advlab
