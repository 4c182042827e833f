#include "xorinv/kvfile.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "xorinv/error.hpp"

namespace xorinv {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorKind::Format, origin + ":" + std::to_string(lineno) + ": expected 'name = value'");
        const std::string name = trim(line.substr(0, eq));
        if (name.empty()) fail(ErrorKind::Format, origin + ":" + std::to_string(lineno) + ": empty name");
        if (kv.has(name)) fail(ErrorKind::Format, origin + ":" + std::to_string(lineno) + ": duplicate '" + name + "'");
        kv.entries_.emplace_back(name, trim(line.substr(eq + 1)));
    }
    return kv;
}

KeyValueFile KeyValueFile::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::string KeyValueFile::to_string(const std::string& header_comment) const {
    std::ostringstream out;
    if (!header_comment.empty()) out << "# " << header_comment << '\n';
    for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
    return out.str();
}

void KeyValueFile::write(const std::filesystem::path& path, const std::string& header_comment) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot open for writing: " + tmp.string());
        out << to_string(header_comment);
        if (!out) fail(ErrorKind::Io, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::Io, "cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void KeyValueFile::set(const std::string& name, const std::string& value) {
    require(value.find('\n') == std::string::npos, "KeyValueFile: value for '" + name + "' contains a newline");
    for (auto& [k, v] : entries_)
        if (k == name) {
            v = value;
            return;
        }
    entries_.emplace_back(name, value);
}

void KeyValueFile::set(const std::string& name, double value) { set(name, format_double(value)); }

bool KeyValueFile::has(const std::string& name) const { return find(name).has_value(); }

std::optional<std::string> KeyValueFile::find(const std::string& name) const {
    for (const auto& [k, v] : entries_)
        if (k == name) return v;
    return std::nullopt;
}

const std::string& KeyValueFile::get(const std::string& name) const {
    for (const auto& [k, v] : entries_)
        if (k == name) return v;
    fail(ErrorKind::Format, origin_ + ": missing field '" + name + "'");
}

std::uint64_t KeyValueFile::get_u64(const std::string& name) const {
    const std::string& s = get(name);
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        fail(ErrorKind::Format, origin_ + ": field '" + name + "' is not an unsigned integer: '" + s + "'");
    return v;
}

double KeyValueFile::get_double(const std::string& name) const {
    const std::string& s = get(name);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        fail(ErrorKind::Format, origin_ + ": field '" + name + "' is not a number: '" + s + "'");
    return v;
}

bool KeyValueFile::get_bool(const std::string& name) const {
    const std::string& s = get(name);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    fail(ErrorKind::Format, origin_ + ": field '" + name + "' is not a boolean: '" + s + "'");
}

std::uint64_t KeyValueFile::get_u64(const std::string& name, std::uint64_t fallback) const {
    return has(name) ? get_u64(name) : fallback;
}

double KeyValueFile::get_double(const std::string& name, double fallback) const {
    return has(name) ? get_double(name) : fallback;
}

bool KeyValueFile::get_bool(const std::string& name, bool fallback) const {
    return has(name) ? get_bool(name) : fallback;
}

void KeyValueFile::check_names(const std::vector<std::string>& allowed) const {
    for (const auto& [k, v] : entries_)
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            fail(ErrorKind::Format, origin_ + ": unknown field '" + k + "'");
}

}  // namespace xorinv
