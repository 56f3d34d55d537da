#pragma once

#include <stdexcept>
#include <string>

namespace csnet {

// Base for everything the library throws.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents or channel counts do not line up.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A cascade does not terminate at 1x1, or violates strict-mode rules.
struct CascadeError : Error {
    CascadeError(const std::string& msg, int stage) : Error(msg), stage_index(stage) {}
    int stage_index;  // offending stage, -1 if not stage-specific
};

// A network description is structurally invalid.
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// A file (dataset, checkpoint, network document) is malformed or truncated.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

}  // namespace csnet
