// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout:
//   bytes 0..7    ASCII "HOPSCOT1"
//   bytes 8..15   manifest length M, unsigned 64-bit little-endian
//   next M bytes  UTF-8 JSON manifest, space padded to a multiple of 8
//   payload       little-endian f32 tensors, row-major, each 8-byte aligned;
//                 byte_offset in the manifest is relative to the payload start
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hopscotch/analysis.hpp"
#include "hopscotch/hopscotch.hpp"
#include "hopscotch/model.hpp"

namespace hopscotch {

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kTraceVersion = 1;

struct Provenance {
    std::uint64_t seed = 0;
    std::string command_line;
    std::string parent_hash;  // sha256 of the checkpoint file this one derives from, or empty
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Attention tensors are absent for layers whose block was physically removed;
/// every such layer must be in `mask`.
struct Checkpoint {
    Weights weights;
    ScaleSet scales;
    BlockMask mask;
    Provenance provenance;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
/// Throws FormatError with a distinct code per failure kind.
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& bytes);

/// SHA-256 of a file's bytes.
std::string file_sha256(const std::string& path);

// ---------------------------------------------------------------------------

struct RunReport {
    RemovalTrace trace;
    std::vector<MmdRow> mmd;
    std::string content_hash;  // filled by save/load
};

/// Indented JSON with a content_hash over the canonical compact form.
std::string serialize_trace(const RunReport& r);
RunReport parse_trace(const std::string& text);
void save_trace(const std::string& path, const RunReport& r);
RunReport load_trace(const std::string& path);
/// Hash of the report as it would be stored (content_hash itself excluded).
std::string trace_content_hash(const RunReport& r);

// ---------------------------------------------------------------------------
// CSV with a header row, RFC-4180 quoting, "\r\n" line ends.

std::string csv_field(const std::string& value);
std::string csv_line(const std::vector<std::string>& fields);
/// %.17g
std::string format_double(double v);

/// step,layer,score,chosen: one row per probe score.
std::string scores_csv(const RemovalTrace& t);
/// step,chosen,final_loss,accepted,strict,flexible
std::string steps_csv(const RemovalTrace& t);
/// stage,strict,flexible,count
std::string stages_csv(const RemovalTrace& t);
/// layer,noscale,hopscotch
std::string mmd_csv(const std::vector<MmdRow>& rows);

/// Writes through a temporary file and a rename.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace hopscotch
