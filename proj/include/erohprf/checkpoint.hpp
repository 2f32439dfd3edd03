#pragma once

#include <string>
#include <variant>

#include "erohprf/block.hpp"
#include "erohprf/reparam.hpp"

namespace erohprf {

// Merged convolution together with the configuration it came from, so a
// merged checkpoint stays self-describing.
template <typename T>
struct MergedModel {
    HPRFBConfig config;
    MergedConv<T> merged;
};

using CheckpointValue = std::variant<HPRFBWeights<float>, HPRFBWeights<double>,
                                     MergedModel<float>, MergedModel<double>>;

// Binary checkpoint, little-endian throughout:
//   magic "ERPF" (4 bytes), version u32 (=1),
//   config record: u32 byte length + UTF-8 key=value lines,
//   tensor count u32,
//   per tensor: name length u16 + UTF-8 name, dtype u8 (0 = f32, 1 = f64),
//               rank u8, dims as u32 each, raw data.
void write_checkpoint(const std::string& path, const HPRFBWeights<float>& w);
void write_checkpoint(const std::string& path, const HPRFBWeights<double>& w);
void write_checkpoint(const std::string& path, const MergedModel<float>& m);
void write_checkpoint(const std::string& path, const MergedModel<double>& m);

// Reconstructs the exact stored object and validates every type invariant.
// Throws ParseError naming the failing record, IoError on filesystem trouble.
CheckpointValue read_checkpoint(const std::string& path);

}  // namespace erohprf
