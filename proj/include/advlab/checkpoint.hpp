#ifndef ADVLAB_CHECKPOINT_HPP
#define ADVLAB_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Ordered collection of named parameter tensors.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
    };

    /// Adds a tensor; names must be unique. Returns its index.
    int add(std::string name, Tensor<T> value);

    int size() const { return static_cast<int>(entries_.size()); }
    const Entry& operator[](int i) const { return entries_[static_cast<std::size_t>(i)]; }
    Entry& operator[](int i) { return entries_[static_cast<std::size_t>(i)]; }
    int index_of(const std::string& name) const;
    Tensor<T>& at(const std::string& name) { return entries_[static_cast<std::size_t>(index_of(name))].value; }
    const Tensor<T>& at(const std::string& name) const { return entries_[static_cast<std::size_t>(index_of(name))].value; }

    std::size_t parameter_count() const;

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    friend bool operator==(const ParamStore& a, const ParamStore& b) {
        if (a.entries_.size() != b.entries_.size()) return false;
        for (std::size_t i = 0; i < a.entries_.size(); ++i) {
            if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
        }
        return true;
    }

private:
    std::vector<Entry> entries_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

// Checkpoint layout, all integers little-endian:
//   magic        8 bytes  "ADVLABCK"
//   version      u32      1
//   meta_len     u32      followed by meta_len bytes of UTF-8 (free-form, usually JSON)
//   count        u32      number of tensors
//   per tensor:
//     name_len   u32, name bytes
//     dtype      u8       0 = float32, 1 = float64
//     ndim       u32, then ndim x u32 dims
//     data       product(dims) values, IEEE-754 little-endian
inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_checkpoint(std::ostream& os, const ParamStore<T>& params, const std::string& metadata = {});

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params, const std::string& metadata = {});

/// Reads a checkpoint, converting stored tensors to T if the dtype differs.
template <typename T>
ParamStore<T> read_checkpoint(std::istream& is, std::string* metadata = nullptr);

template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path, std::string* metadata = nullptr);

} // namespace advlab

#endif // ADVLAB_CHECKPOINT_HPP
