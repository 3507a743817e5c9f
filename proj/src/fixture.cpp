#include "lcnet/fixture.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include <json.hpp>

namespace lcnet {

using nlohmann::json;

static void put_le64(std::ostream& os, uint64_t bits) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

static bool get_le64(std::istream& is, uint64_t& bits) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) return false;
    bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return true;
}

void save_fixture(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    json header;
    header["shape"] = t.shape();
    header["layout"] = t.layout();
    header["dtype"] = "f64";
    header["version"] = 1;
    os << header.dump() << '\n';
    for (int64_t i = 0; i < t.numel(); ++i) put_le64(os, std::bit_cast<uint64_t>(t[i]));
    if (!os) throw FormatError("write failed for '" + path + "'");
}

Tensor load_fixture(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(is, line)) throw FormatError("missing fixture header in '" + path + "'");

    json header;
    try {
        header = json::parse(line);
    } catch (const json::parse_error& e) {
        throw FormatError("bad fixture header in '" + path + "': " + e.what());
    }
    if (!header.contains("shape") || !header.contains("dtype") || !header.contains("version"))
        throw FormatError("fixture header missing required keys in '" + path + "'");
    if (header["dtype"] != "f64") throw FormatError("unsupported dtype in '" + path + "'");
    if (header["version"] != 1) throw FormatError("unsupported fixture version in '" + path + "'");

    std::vector<int64_t> shape = header["shape"].get<std::vector<int64_t>>();
    std::string layout = header.value("layout", "");

    Tensor t;
    try {
        t = Tensor(std::move(shape), std::move(layout));
    } catch (const ShapeError& e) {
        throw FormatError(std::string("bad fixture shape: ") + e.what());
    }
    for (int64_t i = 0; i < t.numel(); ++i) {
        uint64_t bits;
        if (!get_le64(is, bits))
            throw FormatError("truncated payload in '" + path + "': expected " +
                              std::to_string(t.numel()) + " elements");
        t[i] = std::bit_cast<double>(bits);
    }
    // trailing bytes mean the header undercounts the payload
    char extra;
    if (is.read(&extra, 1))
        throw FormatError("payload longer than header shape in '" + path + "'");
    return t;
}

}  // namespace lcnet
