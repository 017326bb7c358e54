#include "headprobe/activation_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include <json.hpp>

#include "headprobe/error.hpp"

namespace headprobe {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

constexpr bool kHostLittle = std::endian::native == std::endian::little;

std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

class PayloadWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class PayloadReader {
public:
    explicit PayloadReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
        return v;
    }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail(ErrorKind::Format, "corrupt header: payload ends early");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void encode_f32(std::span<const float> values, std::vector<char>& out) {
    out.resize(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
        if constexpr (!kHostLittle) bits = byteswap32(bits);
        std::memcpy(out.data() + 4 * i, &bits, 4);
    }
}

float decode_f32(const char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    if constexpr (!kHostLittle) bits = byteswap32(bits);
    return std::bit_cast<float>(bits);
}

std::string describe_cell(std::uint64_t example, std::uint64_t token, HeadCoord coord) {
    std::ostringstream os;
    os << "(layer " << coord.layer << ", head " << coord.head << ", example " << example << ", token "
       << token << ")";
    return os.str();
}

}  // namespace

const char* to_string(TokenMode mode) { return mode == TokenMode::Last ? "LAST" : "ALL"; }

TokenMode token_mode_from_string(std::string_view text) {
    if (text == "LAST" || text == "last") return TokenMode::Last;
    if (text == "ALL" || text == "all") return TokenMode::All;
    fail(ErrorKind::Config, "unknown token mode '" + std::string(text) + "'");
}

void DumpHeader::validate() const {
    auto bad = [](const std::string& what) { fail(ErrorKind::Format, "invalid dump header: " + what); };
    if (version != kDumpVersion) bad("unsupported version " + std::to_string(version));
    if (n_layers < 1) bad("n_layers must be >= 1");
    if (n_heads < 1) bad("n_heads must be >= 1");
    if (head_dim < 1) bad("head_dim must be >= 1");
    if (n_examples < 1) bad("n_examples must be >= 1");
    if (dtype != DType::F32LE) bad("unsupported dtype");
    if (token_mode != TokenMode::Last && token_mode != TokenMode::All) bad("unknown token mode");
    if (example_ids.size() != n_examples) bad("example_ids length differs from n_examples");
    std::set<std::string_view> seen;
    for (const auto& id : example_ids) {
        if (!seen.insert(id).second) bad("duplicate example id '" + id + "'");
    }
    if (token_mode == TokenMode::Last) {
        if (!token_counts.empty()) bad("token_counts present in LAST mode");
    } else {
        if (token_counts.size() != n_examples) bad("token_counts length differs from n_examples");
        for (std::size_t i = 0; i < token_counts.size(); ++i) {
            if (token_counts[i] < 1) bad("example '" + example_ids[i] + "' has zero tokens");
        }
    }
}

std::uint64_t DumpHeader::total_rows() const {
    if (token_mode == TokenMode::Last) return n_examples;
    std::uint64_t total = 0;
    for (auto c : token_counts) total += c;
    return total;
}

std::uint64_t DumpHeader::row_of(std::uint64_t example) const {
    if (token_mode == TokenMode::Last) return example;
    std::uint64_t row = 0;
    for (std::uint64_t i = 0; i < example; ++i) row += token_counts[i];
    return row;
}

std::uint64_t DumpHeader::rows_of(std::uint64_t example) const {
    return token_mode == TokenMode::Last ? 1 : token_counts.at(example);
}

void DumpHeader::check_coord(HeadCoord coord) const {
    if (coord.layer < 0 || static_cast<std::uint64_t>(coord.layer) >= n_layers || coord.head < 0 ||
        static_cast<std::uint64_t>(coord.head) >= n_heads) {
        fail(ErrorKind::Range, "head coordinate (layer " + std::to_string(coord.layer) + ", head " +
                                   std::to_string(coord.head) + ") outside " + std::to_string(n_layers) +
                                   "x" + std::to_string(n_heads) + " grid");
    }
}

std::vector<std::uint8_t> encode_header_payload(const DumpHeader& header) {
    PayloadWriter w;
    w.str(header.model_name);
    w.str(header.capture_point);
    w.u32(header.n_layers);
    w.u32(header.n_heads);
    w.u32(header.head_dim);
    w.u64(header.n_examples);
    w.u8(static_cast<std::uint8_t>(header.token_mode));
    w.u8(static_cast<std::uint8_t>(header.dtype));
    for (const auto& id : header.example_ids) w.str(id);
    if (header.token_mode == TokenMode::All) {
        for (auto c : header.token_counts) w.u64(c);
    }
    w.u32(static_cast<std::uint32_t>(header.attributes.size()));
    for (const auto& [k, v] : header.attributes) {
        w.str(k);
        w.str(v);
    }
    return w.take();
}

std::string header_to_json(const DumpHeader& header) {
    nlohmann::ordered_json j;
    j["magic"] = "ACTV";
    j["version"] = header.version;
    j["model_name"] = header.model_name;
    j["capture_point"] = header.capture_point;
    j["n_layers"] = header.n_layers;
    j["n_heads"] = header.n_heads;
    j["head_dim"] = header.head_dim;
    j["n_examples"] = header.n_examples;
    j["token_mode"] = to_string(header.token_mode);
    j["dtype"] = "F32LE";
    j["example_ids"] = header.example_ids;
    if (header.token_mode == TokenMode::All) j["token_counts"] = header.token_counts;
    j["attributes"] = header.attributes;
    return j.dump(2) + "\n";
}

std::uint64_t dump_file_size(const DumpHeader& header) {
    return kDumpPrefixBytes + encode_header_payload(header).size() +
           4ull * header.n_heads_total() * header.head_dim * header.total_rows();
}

namespace {

struct ParsedPrefix {
    DumpHeader header;
    std::uint64_t data_offset = 0;
};

ParsedPrefix parse_prefix(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kDumpMagic, 4) != 0) {
        fail(ErrorKind::Format, "not a dump: bad magic");
    }
    std::uint8_t fixed[12];
    in.read(reinterpret_cast<char*>(fixed), 12);
    if (in.gcount() != 12) fail(ErrorKind::Format, "corrupt header: truncated prefix");
    PayloadReader pr(std::span<const std::uint8_t>(fixed, 12));
    const auto version = pr.u32();
    const auto payload_len = pr.u64();
    if (version != kDumpVersion) {
        fail(ErrorKind::Format, "not a dump: unsupported version " + std::to_string(version));
    }
    if (payload_len > (std::uint64_t{1} << 34)) fail(ErrorKind::Format, "corrupt header: implausible length");

    std::vector<std::uint8_t> payload(payload_len);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_len));
    if (static_cast<std::uint64_t>(in.gcount()) != payload_len) {
        fail(ErrorKind::Format, "corrupt header: truncated payload");
    }

    PayloadReader r(payload);
    ParsedPrefix out;
    DumpHeader& h = out.header;
    h.version = version;
    h.model_name = r.str();
    h.capture_point = r.str();
    h.n_layers = r.u32();
    h.n_heads = r.u32();
    h.head_dim = r.u32();
    h.n_examples = r.u64();
    const auto mode = r.u8();
    const auto dtype = r.u8();
    if (mode > 1) fail(ErrorKind::Format, "corrupt header: unknown token mode");
    if (dtype != 0) fail(ErrorKind::Format, "corrupt header: unknown dtype");
    h.token_mode = static_cast<TokenMode>(mode);
    h.dtype = DType::F32LE;
    if (h.n_examples > payload_len) fail(ErrorKind::Format, "corrupt header: implausible example count");
    h.example_ids.reserve(h.n_examples);
    for (std::uint64_t i = 0; i < h.n_examples; ++i) h.example_ids.push_back(r.str());
    if (h.token_mode == TokenMode::All) {
        h.token_counts.reserve(h.n_examples);
        for (std::uint64_t i = 0; i < h.n_examples; ++i) h.token_counts.push_back(r.u64());
    }
    const auto n_attrs = r.u32();
    for (std::uint32_t i = 0; i < n_attrs; ++i) {
        auto k = r.str();
        h.attributes[k] = r.str();
    }
    if (!r.at_end()) fail(ErrorKind::Format, "corrupt header: trailing payload bytes");
    try {
        h.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Format, std::string("corrupt header: ") + e.what());
    }
    out.data_offset = kDumpPrefixBytes + payload_len;
    return out;
}

}  // namespace

DumpHeader read_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open dump '" + path.string() + "'");
    return parse_prefix(in).header;
}

// ---------------------------------------------------------------- writer

DumpWriter::DumpWriter(std::filesystem::path path, DumpHeader header)
    : path_(std::move(path)), header_(std::move(header)) {
    header_.validate();
    const auto payload = encode_header_payload(header_);
    data_offset_ = kDumpPrefixBytes + payload.size();

    out_.open(path_, std::ios::binary | std::ios::in | std::ios::out | std::ios::trunc);
    if (!out_) fail(ErrorKind::Io, "cannot create dump '" + path_.string() + "'");

    PayloadWriter prefix;
    prefix.u32(kDumpVersion);
    prefix.u64(payload.size());
    const auto pbytes = prefix.take();
    out_.write(kDumpMagic, 4);
    out_.write(reinterpret_cast<const char*>(pbytes.data()), static_cast<std::streamsize>(pbytes.size()));
    out_.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));

    filled_.assign(header_.n_heads_total() * header_.total_rows(), false);
}

DumpWriter::~DumpWriter() {
    if (!finished_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
}

std::uint64_t DumpWriter::cell_index(std::uint64_t example, std::uint64_t token, HeadCoord coord) const {
    const auto head_index = std::uint64_t(coord.layer) * header_.n_heads + std::uint64_t(coord.head);
    return head_index * header_.total_rows() + header_.row_of(example) + token;
}

void DumpWriter::write(std::uint64_t example, std::uint64_t token, HeadCoord coord,
                       std::span<const float> values) {
    if (finished_) fail(ErrorKind::Contract, "dump writer already finished");
    header_.check_coord(coord);
    if (example >= header_.n_examples) {
        fail(ErrorKind::Format, "cell " + describe_cell(example, token, coord) + ": example out of range");
    }
    if (token >= header_.rows_of(example)) {
        fail(ErrorKind::Format, "cell " + describe_cell(example, token, coord) + ": token out of range");
    }
    if (values.size() != header_.head_dim) {
        fail(ErrorKind::Format, "cell " + describe_cell(example, token, coord) + ": expected " +
                                    std::to_string(header_.head_dim) + " values, got " +
                                    std::to_string(values.size()));
    }
    for (float v : values) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::Validation, "cell " + describe_cell(example, token, coord) + ": non-finite value");
        }
    }
    const auto idx = cell_index(example, token, coord);
    if (filled_[idx]) fail(ErrorKind::Format, "duplicate cell " + describe_cell(example, token, coord));
    filled_[idx] = true;

    std::vector<char> buf;
    encode_f32(values, buf);
    out_.seekp(static_cast<std::streamoff>(data_offset_ + idx * 4ull * header_.head_dim));
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out_) fail(ErrorKind::Io, "write failed on '" + path_.string() + "'");
}

void DumpWriter::finish() {
    if (finished_) return;
    const auto rows = header_.total_rows();
    for (std::uint64_t idx = 0; idx < filled_.size(); ++idx) {
        if (filled_[idx]) continue;
        const auto head_index = idx / rows;
        auto row = idx % rows;
        HeadCoord coord{static_cast<int>(head_index / header_.n_heads),
                        static_cast<int>(head_index % header_.n_heads)};
        std::uint64_t example = 0;
        while (row >= header_.rows_of(example)) row -= header_.rows_of(example++);
        fail(ErrorKind::Format, "missing cell " + describe_cell(example, row, coord));
    }
    out_.flush();
    out_.close();
    if (!out_) fail(ErrorKind::Io, "failed to finalize '" + path_.string() + "'");

    std::ofstream side(path_.string() + ".json", std::ios::binary | std::ios::trunc);
    side << header_to_json(header_);
    if (!side) fail(ErrorKind::Io, "failed to write sidecar for '" + path_.string() + "'");
    finished_ = true;
}

void write_dump(const std::filesystem::path& path, const DumpHeader& header, std::span<const DumpCell> cells) {
    DumpWriter writer(path, header);
    for (const auto& c : cells) writer.write(c.example, c.token, c.coord, c.values);
    writer.finish();
}

// ---------------------------------------------------------------- reader

DumpReader::DumpReader(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open dump '" + path_.string() + "'");
    auto parsed = parse_prefix(in);
    header_ = std::move(parsed.header);
    data_offset_ = parsed.data_offset;

    std::error_code ec;
    const auto size = std::filesystem::file_size(path_, ec);
    const auto expected = data_offset_ + 4ull * header_.n_heads_total() * header_.head_dim * header_.total_rows();
    if (ec || size != expected) {
        fail(ErrorKind::Format, "corrupt dump '" + path_.string() + "': size " + std::to_string(size) +
                                    " bytes, expected " + std::to_string(expected));
    }

    row_starts_.resize(header_.n_examples);
    std::uint64_t row = 0;
    for (std::uint64_t i = 0; i < header_.n_examples; ++i) {
        row_starts_[i] = row;
        row += header_.rows_of(i);
        index_.emplace(header_.example_ids[i], i);
    }
}

std::optional<std::size_t> DumpReader::find_example(std::string_view example_id) const {
    auto it = index_.find(std::string(example_id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void DumpReader::read_rows(std::ifstream& in, HeadCoord coord, std::uint64_t first_row, std::uint64_t n_rows,
                           Eigen::MatrixXd& out, Eigen::Index out_row) const {
    const auto dim = header_.head_dim;
    const auto head_index = std::uint64_t(coord.layer) * header_.n_heads + std::uint64_t(coord.head);
    const auto offset = data_offset_ + 4ull * dim * (head_index * header_.total_rows() + first_row);
    std::vector<char> buf(4ull * dim * n_rows);
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::uint64_t>(in.gcount()) != buf.size()) {
        fail(ErrorKind::Format, "corrupt dump '" + path_.string() + "': short read");
    }
    for (std::uint64_t r = 0; r < n_rows; ++r) {
        for (std::uint32_t c = 0; c < dim; ++c) {
            const float v = decode_f32(buf.data() + 4 * (r * dim + c));
            if (!std::isfinite(v)) {
                fail(ErrorKind::Validation, "non-finite activation at layer " + std::to_string(coord.layer) +
                                                ", head " + std::to_string(coord.head) + ", row " +
                                                std::to_string(first_row + r));
            }
            out(out_row + static_cast<Eigen::Index>(r), c) = v;
        }
    }
}

HeadMatrix DumpReader::load_head_matrix(HeadCoord coord, std::optional<std::span<const std::size_t>> selection) const {
    header_.check_coord(coord);
    std::ifstream in(path_, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open dump '" + path_.string() + "'");

    HeadMatrix m{coord, {}};
    const auto dim = static_cast<Eigen::Index>(header_.head_dim);
    if (!selection) {
        m.values.resize(static_cast<Eigen::Index>(header_.total_rows()), dim);
        read_rows(in, coord, 0, header_.total_rows(), m.values, 0);
        return m;
    }

    std::uint64_t rows = 0;
    for (auto ex : *selection) {
        if (ex >= header_.n_examples) {
            fail(ErrorKind::Range, "example index " + std::to_string(ex) + " outside [0, " +
                                       std::to_string(header_.n_examples) + ")");
        }
        rows += header_.rows_of(ex);
    }
    m.values.resize(static_cast<Eigen::Index>(rows), dim);
    Eigen::Index out_row = 0;
    for (auto ex : *selection) {
        const auto n = header_.rows_of(ex);
        read_rows(in, coord, row_starts_[ex], n, m.values, out_row);
        out_row += static_cast<Eigen::Index>(n);
    }
    return m;
}

Eigen::MatrixXd DumpReader::load_token_series(std::string_view example_id, HeadCoord coord) const {
    if (header_.token_mode != TokenMode::All) {
        fail(ErrorKind::Format, "no token series: dump '" + path_.string() + "' was captured in LAST mode");
    }
    const auto ex = find_example(example_id);
    if (!ex) fail(ErrorKind::NotFound, "example '" + std::string(example_id) + "' not found in dump");
    const std::size_t sel[1] = {*ex};
    return load_head_matrix(coord, std::span<const std::size_t>(sel, 1)).values;
}

}  // namespace headprobe
