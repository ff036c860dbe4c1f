#include "paraclap/error.hpp"

namespace paraclap {

ParseError::ParseError(const std::string& what, std::size_t line)
    : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}

ParseError::ParseError(const std::string& what) : ValidationError(what) {}

}  // namespace paraclap
