#pragma once

#include <stdexcept>
#include <string>

namespace cgmoe {

/// Base exception carrying a short machine-readable code next to the message.
/// The CLI serializes both fields into its error record.
class Error : public std::runtime_error
{
public:
    Error(std::string code, const std::string &message) :
            std::runtime_error(message),
            m_code(std::move(code))
    {
    }
    const std::string& code() const noexcept { return m_code; }

private:
    std::string m_code;
};

inline void require(bool condition, const char *code, const std::string &message)
{
    if (!condition)
        throw Error(code, message);
}

} // namespace cgmoe
