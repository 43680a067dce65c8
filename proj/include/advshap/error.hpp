#pragma once

#include <stdexcept>
#include <string>

namespace advshap {

// Error raised by any library operation. `where()` names the operation that
// rejected its input so callers can report it without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

}  // namespace advshap
