/*
 * Copyright 2026 The CRV Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Everything except the network judge client (crv/judge.hpp), which pulls in
// the HTTP library.

#include "crv/baselines.hpp"
#include "crv/classify.hpp"
#include "crv/cot.hpp"
#include "crv/error.hpp"
#include "crv/expr.hpp"
#include "crv/fingerprint.hpp"
#include "crv/graph.hpp"
#include "crv/graph_io.hpp"
#include "crv/metrics.hpp"
#include "crv/parallel.hpp"
#include "crv/pipeline.hpp"
#include "crv/planted.hpp"
#include "crv/random.hpp"
#include "crv/signal.hpp"
