/*
 * Copyright 2026 The ltlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef LTLAB_CSV_HPP
#define LTLAB_CSV_HPP

#include <string>
#include <string_view>
#include <vector>

namespace ltlab {

/// Shortest "%.9g" text; enough digits to round-trip any 32-bit float.
std::string format_real(double value);

/// Minimal CSV table: a header and string rows, no quoting (fields are
/// numbers and identifiers).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string to_string() const;
    static CsvTable parse(std::string_view text);
    /// Index of a header column; throws if absent.
    std::size_t column(std::string_view name) const;
};

} // namespace ltlab

#endif // LTLAB_CSV_HPP
