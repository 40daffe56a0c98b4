/*
 * Copyright 2026 The pairrel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace pairrel {

// Base of every error the library raises. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define PAIRREL_DEFINE_ERROR(Name)                                 \
  class Name : public Error {                                      \
   public:                                                         \
    using Error::Error;                                            \
    const char* kind() const noexcept override { return #Name; }   \
  }

PAIRREL_DEFINE_ERROR(InvalidArgument);
PAIRREL_DEFINE_ERROR(ConfigError);
PAIRREL_DEFINE_ERROR(MissingEntity);
PAIRREL_DEFINE_ERROR(EmptyPool);
PAIRREL_DEFINE_ERROR(InvalidInput);
PAIRREL_DEFINE_ERROR(InvalidLabel);
PAIRREL_DEFINE_ERROR(DataIntegrity);
PAIRREL_DEFINE_ERROR(InfeasibleSplit);
PAIRREL_DEFINE_ERROR(InvalidManifest);
PAIRREL_DEFINE_ERROR(UndefinedMetric);
PAIRREL_DEFINE_ERROR(EmptyInput);
PAIRREL_DEFINE_ERROR(NumericFault);
PAIRREL_DEFINE_ERROR(NonDeterministic);
PAIRREL_DEFINE_ERROR(ParseError);
PAIRREL_DEFINE_ERROR(ContractViolation);

#undef PAIRREL_DEFINE_ERROR

}  // namespace pairrel
