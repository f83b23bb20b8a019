#pragma once

#include <stdexcept>
#include <string>

namespace fox {

// Context window or cache capacity exceeded.
class CapacityError : public std::runtime_error {
public:
    explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

// An object was driven through an illegal state transition
// (e.g. writing cache entries at positions that are already filled).
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fox
