#pragma once

// Binary store for per-attention-head activation vectors.
//
// Layout (all integers little-endian):
//
//   offset 0   "ACTV"                      4-byte magic
//   offset 4   u32 version                 currently 1
//   offset 8   u64 payload_length
//   offset 16  header payload              payload_length bytes
//   ...        activations, f32 LE         layer-major, head-major,
//                                          example-major, token-major
//
// The header payload is a sequence of fields in fixed order, where str is a
// u32 byte length followed by raw bytes:
//
//   str model_name, str capture_point,
//   u32 n_layers, u32 n_heads, u32 head_dim, u64 n_examples,
//   u8 token_mode (0 = LAST, 1 = ALL), u8 dtype (0 = F32LE),
//   n_examples x str example_id,
//   [ALL only] n_examples x u64 token_count,
//   u32 n_attributes, n_attributes x (str key, str value)   sorted by key
//
// A plain-text JSON sidecar "<dump>.json" mirrors the header.

#include <cstddef>
#include <cstdint>
#include <compare>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace headprobe {

inline constexpr char kDumpMagic[4] = {'A', 'C', 'T', 'V'};
inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::uint64_t kDumpPrefixBytes = 16;

enum class TokenMode : std::uint8_t { Last = 0, All = 1 };
enum class DType : std::uint8_t { F32LE = 0 };

const char* to_string(TokenMode mode);
TokenMode token_mode_from_string(std::string_view text);

struct HeadCoord {
    int layer = 0;
    int head = 0;

    auto operator<=>(const HeadCoord&) const = default;
};

struct DumpHeader {
    std::uint32_t version = kDumpVersion;
    std::string model_name;
    // Free-form note on where in the model the vectors were captured.
    std::string capture_point;
    std::uint32_t n_layers = 0;
    std::uint32_t n_heads = 0;
    std::uint32_t head_dim = 0;
    std::uint64_t n_examples = 0;
    TokenMode token_mode = TokenMode::Last;
    DType dtype = DType::F32LE;
    std::vector<std::string> example_ids;
    // One entry per example in ALL mode, empty in LAST mode.
    std::vector<std::uint64_t> token_counts;
    // Writer-specific provenance (template flags, chat formatting, ...).
    std::map<std::string, std::string> attributes;

    bool operator==(const DumpHeader&) const = default;

    // Throws Error(Format) naming the first violated invariant.
    void validate() const;

    std::uint64_t n_heads_total() const { return std::uint64_t{n_layers} * n_heads; }
    // Rows per head matrix: n_examples (LAST) or the token total (ALL).
    std::uint64_t total_rows() const;
    // First row of an example inside a head matrix.
    std::uint64_t row_of(std::uint64_t example) const;
    std::uint64_t rows_of(std::uint64_t example) const;
    void check_coord(HeadCoord coord) const;
};

struct HeadMatrix {
    HeadCoord coord;
    Eigen::MatrixXd values;  // rows x head_dim
};

std::vector<std::uint8_t> encode_header_payload(const DumpHeader& header);
std::string header_to_json(const DumpHeader& header);

// Expected total file size for a header.
std::uint64_t dump_file_size(const DumpHeader& header);

DumpHeader read_header(const std::filesystem::path& path);

// Streams cells into their canonical positions. Cells may arrive in any
// order; finish() fails unless every cell was written exactly once.
class DumpWriter {
public:
    DumpWriter(std::filesystem::path path, DumpHeader header);
    ~DumpWriter();

    DumpWriter(const DumpWriter&) = delete;
    DumpWriter& operator=(const DumpWriter&) = delete;

    // token must be 0 in LAST mode.
    void write(std::uint64_t example, std::uint64_t token, HeadCoord coord,
               std::span<const float> values);

    // Verifies completeness and writes the JSON sidecar.
    void finish();

    const DumpHeader& header() const { return header_; }

private:
    std::uint64_t cell_index(std::uint64_t example, std::uint64_t token, HeadCoord coord) const;

    std::filesystem::path path_;
    DumpHeader header_;
    std::fstream out_;
    std::uint64_t data_offset_ = 0;
    std::vector<bool> filled_;
    bool finished_ = false;
};

struct DumpCell {
    std::uint64_t example = 0;
    std::uint64_t token = 0;
    HeadCoord coord;
    std::span<const float> values;
};

void write_dump(const std::filesystem::path& path, const DumpHeader& header,
                std::span<const DumpCell> cells);

// Read-only random access. All const members are safe to call concurrently;
// each call opens its own stream.
class DumpReader {
public:
    explicit DumpReader(std::filesystem::path path);

    const DumpHeader& header() const { return header_; }
    const std::filesystem::path& path() const { return path_; }
    std::uint64_t data_offset() const { return data_offset_; }

    std::optional<std::size_t> find_example(std::string_view example_id) const;

    // All rows for the head, or only the rows of the selected examples in
    // selection order (ALL mode: each example contributes its token block).
    HeadMatrix load_head_matrix(HeadCoord coord,
                                std::optional<std::span<const std::size_t>> selection = std::nullopt) const;

    // T x head_dim token rows for one example of an ALL-mode dump.
    Eigen::MatrixXd load_token_series(std::string_view example_id, HeadCoord coord) const;

private:
    void read_rows(std::ifstream& in, HeadCoord coord, std::uint64_t first_row, std::uint64_t n_rows,
                   Eigen::MatrixXd& out, Eigen::Index out_row) const;

    std::filesystem::path path_;
    DumpHeader header_;
    std::uint64_t data_offset_ = 0;
    std::vector<std::uint64_t> row_starts_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace headprobe
