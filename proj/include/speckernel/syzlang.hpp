#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace speckernel::syz {

// Heap-allocated value with deep copy and value equality, for recursive nodes.
template <typename T>
class Box {
public:
    Box() : ptr_(std::make_unique<T>()) {}
    Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}  // NOLINT implicit
    Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
    Box(Box&&) noexcept = default;
    Box& operator=(const Box& other) {
        if (this != &other) ptr_ = std::make_unique<T>(*other.ptr_);
        return *this;
    }
    Box& operator=(Box&&) noexcept = default;
    ~Box() = default;

    T& operator*() { return *ptr_; }
    const T& operator*() const { return *ptr_; }
    T* operator->() { return ptr_.get(); }
    const T* operator->() const { return ptr_.get(); }

    friend bool operator==(const Box& a, const Box& b) { return *a.ptr_ == *b.ptr_; }

private:
    std::unique_ptr<T> ptr_;
};

enum class Dir { In, Out, InOut };
std::string_view to_string(Dir d);

// An integer literal or a named constant.
using Operand = std::variant<std::int64_t, std::string>;

struct Range {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    bool operator==(const Range&) const = default;
};

struct TypeExpr;

struct IntType {
    std::string name;  // int8 int16 int32 int64 intptr
    std::optional<Range> range;
    bool operator==(const IntType&) const = default;
};
struct ConstType {
    Operand value;
    std::string base;  // optional underlying int type
    bool operator==(const ConstType&) const = default;
};
struct FlagsType {
    std::string set;
    std::string base;
    bool operator==(const FlagsType&) const = default;
};
struct PtrType {
    Dir dir = Dir::In;
    Box<TypeExpr> elem;
    bool operator==(const PtrType&) const = default;
};
struct ArrayType {
    Box<TypeExpr> elem;
    std::optional<Operand> length;
    bool operator==(const ArrayType&) const = default;
};
struct StringType {
    std::optional<std::string> literal;
    bool operator==(const StringType&) const = default;
};
struct LenType {
    std::vector<std::string> path;  // rendered joined by ':'
    std::string base;
    bool operator==(const LenType&) const = default;
};
// Reference to a struct, union, or resource, resolved during validation.
struct NamedType {
    std::string name;
    bool operator==(const NamedType&) const = default;
};

struct TypeExpr {
    std::variant<IntType, ConstType, FlagsType, PtrType, ArrayType, StringType, LenType, NamedType> node;
    bool operator==(const TypeExpr&) const = default;
};

struct Field {
    std::string name;
    TypeExpr type;
    std::optional<Dir> dir;
    bool operator==(const Field&) const = default;
};

struct ResourceDecl {
    std::string name;
    std::string underlying;
    std::vector<std::string> produced_by;  // derived from syscalls
    std::vector<std::string> consumed_by;  // derived from syscalls
    std::vector<std::string> comments;
    bool operator==(const ResourceDecl&) const = default;
};

struct SyscallDesc {
    std::string base_name;
    std::string variant;
    std::vector<Field> params;
    std::optional<std::string> ret;
    std::string source_handler;  // provenance only; not part of the text form
    std::optional<std::string> identifier_const;
    std::vector<std::string> comments;

    std::string full_name() const { return variant.empty() ? base_name : base_name + "$" + variant; }
    // Structural equality ignores provenance.
    bool operator==(const SyscallDesc& o) const {
        return base_name == o.base_name && variant == o.variant && params == o.params && ret == o.ret &&
               identifier_const == o.identifier_const && comments == o.comments;
    }
};

struct TypeDef {
    std::string name;
    bool is_union = false;
    std::vector<Field> fields;
    std::vector<std::string> comments;
    bool operator==(const TypeDef&) const = default;
};

struct FlagSet {
    std::string name;
    std::vector<Operand> values;
    std::vector<std::string> comments;
    bool operator==(const FlagSet&) const = default;
};

struct SpecFile {
    std::vector<std::string> includes;
    std::vector<ResourceDecl> resources;
    std::vector<SyscallDesc> syscalls;
    std::vector<TypeDef> types;
    std::vector<FlagSet> flag_sets;
    std::map<std::string, std::int64_t> constants;

    bool operator==(const SpecFile&) const = default;
    bool empty() const {
        return includes.empty() && resources.empty() && syscalls.empty() && types.empty() &&
               flag_sets.empty();
    }

    SyscallDesc* find_syscall(std::string_view full_name);
    const SyscallDesc* find_syscall(std::string_view full_name) const;
    TypeDef* find_type(std::string_view name);
    const TypeDef* find_type(std::string_view name) const;
    const ResourceDecl* find_resource(std::string_view name) const;
    const FlagSet* find_flag_set(std::string_view name) const;
};

// Throws SyntaxError(line, column, expected).
SpecFile parse_spec(std::string_view text);
TypeExpr parse_type(std::string_view text);

std::string render_spec(const SpecFile& spec);
std::string render_type(const TypeExpr& type);
std::string render_operand(const Operand& op);
// Text of a single declaration (syscall, type, resource, or flag set), without a trailing newline.
std::optional<std::string> render_declaration(const SpecFile& spec, std::string_view target);

// Line range of each declaration in render_spec output, in output order.
struct DeclLocation {
    std::string target;
    int first_line = 0;
    int last_line = 0;
};
std::vector<DeclLocation> layout(const SpecFile& spec);

// Recompute ResourceDecl::produced_by / consumed_by and SyscallDesc::identifier_const.
void link_resources(SpecFile& spec);

// Every name referenced by a declaration: types, resources, flag sets.
std::vector<std::string> referenced_names(const TypeExpr& type);
std::vector<std::string> referenced_names(const SpecFile& spec, std::string_view target);
// Named constants referenced by a declaration.
std::vector<std::string> referenced_constants(const SpecFile& spec, std::string_view target);

bool is_int_type_name(std::string_view name);
// Names of every top-level declaration, in rendering order.
std::vector<std::string> declaration_names(const SpecFile& spec);
bool remove_declaration(SpecFile& spec, std::string_view target);

}  // namespace speckernel::syz
