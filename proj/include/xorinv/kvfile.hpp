#pragma once

// Plain-text `name = value` files: one entry per line, '#' starts a comment
// line, names are unique, order is preserved on write.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace xorinv {

class KeyValueFile {
public:
    static KeyValueFile read(const std::filesystem::path& path);
    static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");

    /// Atomic write (temp file then rename).
    void write(const std::filesystem::path& path, const std::string& header_comment = {}) const;
    std::string to_string(const std::string& header_comment = {}) const;

    void set(const std::string& name, const std::string& value);
    void set(const std::string& name, std::uint64_t value) { set(name, std::to_string(value)); }
    void set(const std::string& name, double value);
    void set(const std::string& name, bool value) { set(name, std::string(value ? "true" : "false")); }
    void set(const std::string& name, const char* value) { set(name, std::string(value)); }

    bool has(const std::string& name) const;
    std::optional<std::string> find(const std::string& name) const;
    const std::string& get(const std::string& name) const;
    std::uint64_t get_u64(const std::string& name) const;
    double get_double(const std::string& name) const;
    bool get_bool(const std::string& name) const;

    std::uint64_t get_u64(const std::string& name, std::uint64_t fallback) const;
    double get_double(const std::string& name, double fallback) const;
    bool get_bool(const std::string& name, bool fallback) const;

    /// Throws if any entry name is not in `allowed`.
    void check_names(const std::vector<std::string>& allowed) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    const std::string& origin() const { return origin_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::string origin_ = "<memory>";
};

/// Shortest decimal that round-trips the double.
std::string format_double(double v);

}  // namespace xorinv
