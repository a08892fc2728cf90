#pragma once

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"
#include "nicekit/hash.hpp"
#include "nicekit/http.hpp"
#include "nicekit/log.hpp"
#include "nicekit/metrics.hpp"
#include "nicekit/model.hpp"
#include "nicekit/nice.hpp"
#include "nicekit/prompting.hpp"
#include "nicekit/random.hpp"
#include "nicekit/selectors.hpp"
#include "nicekit/similarity.hpp"
