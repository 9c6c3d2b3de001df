#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "speckernel/indexer.hpp"

namespace speckernel {

// Linux generic ioctl command layout: nr 8 bits, type 8 bits, size 14 bits, dir 2 bits.
namespace ioc {
inline constexpr std::uint32_t kNone = 0;
inline constexpr std::uint32_t kWrite = 1;
inline constexpr std::uint32_t kRead = 2;

constexpr std::uint32_t encode(std::uint32_t dir, std::uint32_t type, std::uint32_t nr, std::uint32_t size) {
    return (dir << 30) | ((size & 0x3fff) << 16) | ((type & 0xff) << 8) | (nr & 0xff);
}
}  // namespace ioc

// Evaluates integer constant expressions over the macro and enumerator tables of a
// definition database. Understands literals, + - * / % << >> & | ^ ~, casts,
// sizeof, function-like macros, and the _IO/_IOR/_IOW/_IOWR/_IOC family.
class ConstantEvaluator {
public:
    explicit ConstantEvaluator(const DefinitionDatabase& db, std::map<std::string, std::int64_t> builtins = {});

    std::optional<std::int64_t> value(std::string_view name);
    std::optional<std::int64_t> evaluate(std::string_view expr);
    // sizeof for a C type spelled as in source, e.g. "struct dm_ioctl" or "__u32".
    std::optional<std::uint64_t> size_of(std::string_view c_type);

private:
    struct Layout {
        std::uint64_t size = 0;
        std::uint64_t align = 1;
    };
    std::optional<Layout> layout_of(std::string_view c_type);
    std::optional<Layout> aggregate_layout(std::string_view tag_kind, std::string_view name);
    std::optional<Layout> body_layout(std::string_view body, bool is_union, bool packed);

    friend class ExprParser;

    const DefinitionDatabase& db_;
    std::map<std::string, std::int64_t> builtins_;
    std::map<std::string, std::optional<std::int64_t>, std::less<>> memo_;
    std::set<std::string, std::less<>> in_progress_;
    int depth_ = 0;
};

}  // namespace speckernel
