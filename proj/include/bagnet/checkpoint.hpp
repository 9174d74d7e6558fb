#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bagnet/model.hpp"
#include "bagnet/optim.hpp"

namespace bagnet {

// Layout is described in docs/checkpoint_format.md.
inline constexpr char kCheckpointMagic[8] = {'B', 'A', 'G', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
    ModelParams<T> params;
    std::optional<AdamState<T>> optimizer;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ModelParams<T>& params, const AdamState<T>* optimizer);

// Parses and validates a complete checkpoint image.
//   CheckpointVersionError   unknown format version
//   CheckpointTruncatedError the image ends before the layout does
//   CheckpointIntegrityError bad magic, crc mismatch, or bytes after the crc
//   CheckpointShapeError     scalar width or tensor shapes disagree with the stored config
template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params,
                     const AdamState<T>* optimizer = nullptr);

template <typename T>
Checkpoint<T> read_checkpoint(const std::filesystem::path& path);

// Replaces `params` (and `optimizer` when given) with the file contents. The stored config must
// equal params.config, otherwise CheckpointShapeError. Nothing is modified on any failure.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, ModelParams<T>& params, AdamState<T>* optimizer = nullptr);

}  // namespace bagnet
