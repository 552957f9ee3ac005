#pragma once

#include <abow/descriptors.hpp>
#include <abow/errors.hpp>
#include <abow/eval.hpp>
#include <abow/histogram.hpp>
#include <abow/index.hpp>
#include <abow/query.hpp>
#include <abow/random.hpp>
#include <abow/stopping.hpp>
#include <abow/vocabulary.hpp>
