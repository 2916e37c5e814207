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

#include "ltlab/csv.hpp"

#include <cstdio>
#include <sstream>

#include "ltlab/error.hpp"

namespace ltlab {

std::string format_real(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    return buf;
}

namespace {

void append_row(std::string& out, const std::vector<std::string>& fields)
{
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i].find_first_of(",\n") != std::string::npos)
            throw ValidationError("csv field '" + fields[i] + "' contains a separator");
        if (i)
            out += ',';
        out += fields[i];
    }
    out += '\n';
}

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ','))
        out.push_back(field);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

} // namespace

std::string CsvTable::to_string() const
{
    std::string out;
    append_row(out, header);
    for (const auto& r : rows) {
        if (r.size() != header.size())
            throw ValidationError("csv row has " + std::to_string(r.size()) + " fields, header has "
                                  + std::to_string(header.size()));
        append_row(out, r);
    }
    return out;
}

CsvTable CsvTable::parse(std::string_view text)
{
    CsvTable t;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        auto fields = split_line(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            throw ValidationError("csv line " + std::to_string(lineno) + " has " + std::to_string(fields.size())
                                  + " fields, expected " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    if (t.header.empty())
        throw ValidationError("csv input has no header");
    return t;
}

std::size_t CsvTable::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name)
            return i;
    throw ValidationError("csv has no column '" + std::string(name) + "'");
}

} // namespace ltlab
