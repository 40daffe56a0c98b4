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

#include "pairrel/autograd.hpp"
#include "pairrel/conditioning.hpp"
#include "pairrel/drift.hpp"
#include "pairrel/encoders.hpp"
#include "pairrel/errors.hpp"
#include "pairrel/fixtures.hpp"
#include "pairrel/gradcheck.hpp"
#include "pairrel/heads.hpp"
#include "pairrel/io.hpp"
#include "pairrel/metrics.hpp"
#include "pairrel/model.hpp"
#include "pairrel/nn.hpp"
#include "pairrel/rng.hpp"
#include "pairrel/serialization.hpp"
#include "pairrel/splits.hpp"
#include "pairrel/tensor.hpp"
#include "pairrel/training.hpp"
#include "pairrel/trunk.hpp"
