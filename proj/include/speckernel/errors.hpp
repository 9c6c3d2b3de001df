#pragma once

#include <stdexcept>
#include <string>

namespace speckernel {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    explicit IoError(std::string path, const std::string& why)
        : Error("cannot read " + path + ": " + why), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

class SyntaxError : public Error {
public:
    SyntaxError(int line, int column, std::string expected)
        : Error("syntax error at " + std::to_string(line) + ":" + std::to_string(column) +
                ": " + expected),
          line_(line), column_(column), expected_(std::move(expected)) {}

    int line() const { return line_; }
    int column() const { return column_; }
    const std::string& expected() const { return expected_; }

private:
    int line_;
    int column_;
    std::string expected_;
};

class AssetMissing : public Error {
public:
    explicit AssetMissing(const std::string& stage)
        : Error("prompt asset missing for stage " + stage) {}
};

class BackendUnavailable : public Error {
public:
    using Error::Error;
};

class MalformedResponse : public Error {
public:
    MalformedResponse(std::string raw, const std::string& why)
        : Error("malformed model response: " + why), raw_(std::move(raw)) {}
    const std::string& raw_text() const { return raw_; }

private:
    std::string raw_;
};

class ReplayMiss : public Error {
public:
    explicit ReplayMiss(std::string hash)
        : Error("no recorded response for prompt " + hash), hash_(std::move(hash)) {}
    const std::string& prompt_hash() const { return hash_; }

private:
    std::string hash_;
};

}  // namespace speckernel
