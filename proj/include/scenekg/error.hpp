#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scenekg {

enum class ErrorKind {
    invalid_argument,
    degenerate_geometry,
    parse,
    schema,
    reference,
    empty_reference,
    type,
    config,
    spec,
    degenerate_supervision,
    transport,
    io,
};

inline std::string_view to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_argument: return "invalid-argument";
        case ErrorKind::degenerate_geometry: return "degenerate-geometry";
        case ErrorKind::parse: return "parse";
        case ErrorKind::schema: return "schema";
        case ErrorKind::reference: return "reference";
        case ErrorKind::empty_reference: return "empty-reference";
        case ErrorKind::type: return "type";
        case ErrorKind::config: return "config";
        case ErrorKind::spec: return "spec";
        case ErrorKind::degenerate_supervision: return "degenerate-supervision";
        case ErrorKind::transport: return "transport";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

/// Every module reports failures through this one exception type; `kind()`
/// distinguishes the categories callers are expected to branch on.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// "<kind>: <message>", the form printed by the command-line tool.
    std::string structured() const {
        return std::string(to_string(kind_)) + ": " + what();
    }

private:
    ErrorKind kind_;
};

/// Parse failures carry a 1-based source position. For line-delimited files
/// only the line is meaningful and column is 0.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, int line, int column)
        : Error(ErrorKind::parse, format(msg, line, column)),
          line_(line), column_(column), message_(msg) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }
    const std::string& message() const noexcept { return message_; }

private:
    static std::string format(const std::string& msg, int line, int column) {
        std::string out = "line " + std::to_string(line);
        if (column > 0) out += ", column " + std::to_string(column);
        return out + ": " + msg;
    }

    int line_;
    int column_;
    std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

}  // namespace scenekg
