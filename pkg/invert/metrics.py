"""

invert.metrics
~~~~~~~~~~~~~~

Evaluation quantities for recovery runs and their serialization.

Reported reconstruction loss is the mean squared error per pixel on
[-1, 1]-scaled images, i.e. the optimizer's raw sum of squares divided by
the number of pixels (times channels). Traces carry both values.

"""

import bisect
import csv
import math

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .constants import PROVENANCE_GENERATED, PROVENANCE_REAL, TERMINATION_FAILED, TRACE_COLUMNS, RECORD_COLUMNS
from .diffnet import as_tensor
from .exceptions import InvertShapeError, InvertValueError, InvertIOError
from .recovery import RecoveryTrace

class EvalRecord(object):
    """ Evaluation of one recovered image.

    Properties:
    image_id -- id of the target LabeledImage
    provenance -- PROVENANCE_GENERATED or PROVENANCE_REAL
    reconstruction_loss -- final per-pixel MSE
    initial_loss -- per-pixel MSE at iteration 0
    z_error -- ||z - z_p||, None for real images
    label_true, label_decoded -- true and argmax-decoded class
    label_tied -- the argmax was tied
    regularizer_enabled -- the L1 term was in the objective
    iterations -- steps taken
    termination -- termination reason
    """

    def __init__(self, image_id, provenance, reconstruction_loss, initial_loss, z_error, label_true,
                 label_decoded, label_tied = False, regularizer_enabled = True, iterations = 0,
                 termination = ""):
        if (z_error is None) != (provenance == PROVENANCE_REAL):
            raise InvertValueError("%s: z_error must be present exactly for generated images" % image_id)
        if reconstruction_loss < 0:
            raise InvertValueError("%s: negative reconstruction loss" % image_id)
        self.image_id = image_id
        self.provenance = provenance
        self.reconstruction_loss = float(reconstruction_loss)
        self.initial_loss = float(initial_loss)
        self.z_error = None if z_error is None else float(z_error)
        self.label_true = int(label_true)
        self.label_decoded = None if label_decoded is None else int(label_decoded)
        self.label_tied = bool(label_tied)
        self.regularizer_enabled = bool(regularizer_enabled)
        self.iterations = int(iterations)
        self.termination = termination

    def __str__(self):
        return "EvalRecord (%s, %s)" % (self.image_id, self.provenance)

    def __repr__(self):
        return "<%s>" % self

    def __eq__(self, other):
        return isinstance(other, EvalRecord) and self.to_row() == other.to_row()

    def __ne__(self, other):
        return not self == other

    @property
    def correct(self):
        return self.label_decoded == self.label_true

    @classmethod
    def from_result(cls, image, result, regularizer_enabled = True):
        """ Record for LabeledImage image recovered as RecoveryResult result. """
        pixels = image.pixels.size
        z_error = None
        if image.provenance == PROVENANCE_GENERATED:
            z_error = z_recovery_error(image.z, result.z_p) if result.ok else math.nan
        return cls(image.id, image.provenance, result.recon / pixels, result.initial_recon / pixels,
                   z_error, image.label, result.label, result.tied, regularizer_enabled,
                   result.iterations, result.termination)

    def to_row(self):
        return { column : getattr(self, column) for column in RECORD_COLUMNS }

    @classmethod
    def from_row(cls, row):
        return cls(row["image_id"], row["provenance"], float(row["reconstruction_loss"]),
                   float(row["initial_loss"]), _parse_optional(row["z_error"], float),
                   int(row["label_true"]), _parse_optional(row["label_decoded"], int),
                   _parse_bool(row["label_tied"]), _parse_bool(row["regularizer_enabled"]),
                   int(row["iterations"]), row["termination"])


class AggregateReport(object):
    """ Summary of a set of records, shaped like a results table row.

    Properties:
    count -- number of records
    failed -- records whose recovery failed
    mean_loss -- mean final per-pixel MSE
    mean_initial_loss -- batch mean of the iteration-0 MSE (the bracketed baseline)
    accuracy -- fraction of records with the label recovered
    mean_z_error -- mean z error over generated records, or None
    provenance -- common provenance, or "mixed"
    regularizer_enabled -- common flag, or None when mixed
    digest -- config digest of the runs
    """

    def __init__(self, count, failed, mean_loss, mean_initial_loss, accuracy, mean_z_error,
                 provenance, regularizer_enabled, digest = None):
        self.count = count
        self.failed = failed
        self.mean_loss = mean_loss
        self.mean_initial_loss = mean_initial_loss
        self.accuracy = accuracy
        self.mean_z_error = mean_z_error
        self.provenance = provenance
        self.regularizer_enabled = regularizer_enabled
        self.digest = digest

    def __str__(self):
        return "AggregateReport (%s, %d records)" % (self.provenance, self.count)

    def to_dict(self):
        return { "count" : self.count, "failed" : self.failed, "mean_loss" : self.mean_loss,
                 "mean_initial_loss" : self.mean_initial_loss, "accuracy" : self.accuracy,
                 "mean_z_error" : self.mean_z_error, "provenance" : self.provenance,
                 "regularizer_enabled" : self.regularizer_enabled, "digest" : self.digest }

#------------------------------------------------------------------------
# Quantities
#------------------------------------------------------------------------

def reconstruction_loss(a, b):
    """ Mean over pixels and channels of the squared difference. """
    a = as_tensor(a, name = "a")
    b = as_tensor(b, name = "b")
    if a.shape != b.shape:
        raise InvertShapeError("cannot compare images of shapes %s and %s" % (a.shape, b.shape))
    return float(np.mean((a - b) ** 2))

def z_recovery_error(z, z_p):
    z = as_tensor(z, name = "z")
    z_p = as_tensor(z_p, name = "z_p")
    if z.shape != z_p.shape:
        raise InvertShapeError("latent lengths differ: %s vs %s" % (z.shape, z_p.shape))
    return float(np.linalg.norm(z - z_p))

def label_accuracy(records):
    if not records:
        raise InvertValueError("no records")
    return sum(1 for record in records if record.correct) / len(records)

def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values) if values else None

def _common(values, mixed):
    values = set(values)
    return values.pop() if len(values) == 1 else mixed

def aggregate(records, digest = None):
    """ Aggregate records into a report. Failed recoveries count as wrong
    labels and are left out of the loss means. """
    if not records:
        raise InvertValueError("no records")
    good = [ record for record in records if record.termination != TERMINATION_FAILED ]
    return AggregateReport(
        count = len(records),
        failed = len(records) - len(good),
        mean_loss = _mean(record.reconstruction_loss for record in good),
        mean_initial_loss = _mean(record.initial_loss for record in good),
        accuracy = label_accuracy(records),
        mean_z_error = _mean(record.z_error for record in good if record.z_error is not None),
        provenance = _common((record.provenance for record in records), "mixed"),
        regularizer_enabled = _common((record.regularizer_enabled for record in records), None),
        digest = digest)

def summarize(records, digest = None):
    """ One report per (provenance, regularizer) group, in sorted order. """
    groups = {}
    for record in records:
        groups.setdefault((record.provenance, record.regularizer_enabled), []).append(record)
    return [ aggregate(groups[key], digest) for key in sorted(groups) ]

def _format_loss(value):
    return "-" if value is None else "%.4f" % value

def format_table(reports):
    """ Plain-text table: loss (initial loss), label accuracy and z error per
    (provenance, regularizer) row. Initial losses are batch means. """
    lines = [ "%-10s %-12s %6s %22s %9s %9s" % ("images", "regularizer", "n", "loss (initial, mean)",
                                                "accuracy", "z error") ]
    for report in reports:
        regularizer = { True : "with", False : "without", None : "mixed" }[report.regularizer_enabled]
        loss = "%s (%s)" % (_format_loss(report.mean_loss), _format_loss(report.mean_initial_loss))
        lines.append("%-10s %-12s %6d %22s %9.4f %9s" % (report.provenance, regularizer, report.count,
                                                         loss, report.accuracy, _format_loss(report.mean_z_error)))
    return "\n".join(lines)

#------------------------------------------------------------------------
# Trace analysis
#------------------------------------------------------------------------

def _value_at(trace, column, iteration):
    """ Value of the last sample at or before iteration. A run that stopped
    early keeps its final value. """
    n = bisect.bisect_right(trace.iteration, iteration) - 1
    if n < 0:
        raise InvertValueError("trace has no sample at or before iteration %d" % iteration)
    value = getattr(trace, column)[n]
    if value is None:
        raise InvertValueError("trace has no %s values" % column)
    return float(value)

def median_at(traces, iteration, column = "recon_mse"):
    """ Median of column across traces at the given iteration. """
    if not traces:
        raise InvertValueError("no traces")
    return float(np.median([ _value_at(trace, column, iteration) for trace in traces ]))

def mean_curve(traces, columns = ("recon_mse", "recon_sum", "reg_term", "z_error", "label_correct")):
    """ Pointwise mean of traces over the union of their sample iterations.
    The mean of label_correct is the label accuracy at that iteration. """
    if not traces:
        raise InvertValueError("no traces")
    iterations = sorted(set().union(*(trace.iteration for trace in traces)))
    curve = RecoveryTrace()
    curve.iteration = iterations
    for column in TRACE_COLUMNS[1:]:
        values = []
        for iteration in iterations:
            if column in columns and all(getattr(trace, column)[0] is not None for trace in traces):
                values.append(_mean(_value_at(trace, column, iteration) for trace in traces))
            else:
                values.append(None)
        setattr(curve, column, values)
    return curve

#------------------------------------------------------------------------
# CSV
#------------------------------------------------------------------------

def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)

def _parse_optional(text, kind):
    return None if text == "" else kind(text)

def _parse_bool(text):
    if text not in ("0", "1"):
        raise InvertValueError("expected 0 or 1, got %r" % text)
    return text == "1"

def write_csv(data, path):
    """ Write EvalRecords, a RecoveryTrace, or a mapping of image id to
    RecoveryTrace. Floats are written in shortest round-trip form. """
    if isinstance(data, RecoveryTrace):
        columns, rows = TRACE_COLUMNS, data.rows()
    elif isinstance(data, dict):
        columns = [ "image_id" ] + TRACE_COLUMNS
        rows = []
        for image_id, trace in data.items():
            if not len(trace):
                raise InvertValueError("trace for %s is empty" % image_id)
            rows += [ dict(row, image_id = image_id) for row in trace.rows() ]
    else:
        columns, rows = RECORD_COLUMNS, [ record.to_row() for record in data ]
    if not rows:
        raise InvertValueError("nothing to write")

    try:
        with open(path, "w", newline = "") as fd:
            writer = csv.DictWriter(fd, fieldnames = columns)
            writer.writeheader()
            for row in rows:
                writer.writerow({ key : _format_cell(value) for key, value in row.items() })
    except OSError as e:
        raise InvertIOError("could not write CSV (%s)" % e, path)
    return path

def _trace_from_rows(rows):
    for row in rows:
        row["z_error"] = _parse_optional(row["z_error"], float)
        row["label_correct"] = _parse_optional(row["label_correct"], _parse_bool)
    return RecoveryTrace.from_rows(rows)

def read_csv(path):
    """ Inverse of write_csv(): a list of EvalRecords, a RecoveryTrace, or a
    dict of image id to RecoveryTrace, depending on the header. """
    try:
        with open(path, newline = "") as fd:
            reader = csv.DictReader(fd)
            columns = reader.fieldnames or []
            rows = list(reader)
    except FileNotFoundError:
        raise
    except OSError as e:
        raise InvertIOError("could not read CSV (%s)" % e, path)

    try:
        if columns == RECORD_COLUMNS:
            return [ EvalRecord.from_row(row) for row in rows ]
        if columns == TRACE_COLUMNS:
            return _trace_from_rows(rows)
        if columns == [ "image_id" ] + TRACE_COLUMNS:
            grouped = {}
            for row in rows:
                grouped.setdefault(row.pop("image_id"), []).append(row)
            return { image_id : _trace_from_rows(group) for image_id, group in grouped.items() }
    except (KeyError, ValueError) as e:
        raise InvertIOError("malformed CSV row (%s)" % e, path)
    raise InvertIOError("unrecognized CSV header %s" % columns, path)

#------------------------------------------------------------------------
# SVG curves
#------------------------------------------------------------------------

SERIES_STYLES = [ { "color" : "red", "linestyle" : "-" },
                  { "color" : "blue", "linestyle" : "--" } ]

def write_svg_curves(series, path, column = "recon_mse", title = None):
    """ Plot column against iteration for each (label, trace) pair on one
    pair of axes. The first series (conventionally with the regularizer) is
    red solid, the second blue dashed. Each line is emitted as an SVG group
    with id "series-<n>". """
    series = list(series)
    if not series:
        raise InvertValueError("no series to plot")
    for label, trace in series:
        if not len(trace):
            raise InvertValueError("trace %r is empty" % label)
        if getattr(trace, column)[0] is None:
            raise InvertValueError("trace %r has no %s values" % (label, column))

    plt.rcParams["svg.hashsalt"] = "pyinvert"
    fig, ax = plt.subplots(figsize = (6, 4))
    try:
        for n, (label, trace) in enumerate(series):
            style = SERIES_STYLES[n] if n < len(SERIES_STYLES) else {}
            line, = ax.plot(trace.iteration, [ float(v) for v in getattr(trace, column) ],
                            label = label, **style)
            line.set_gid("series-%d" % n)
        ax.set_xlabel("iteration")
        ax.set_ylabel(column)
        if column in ("recon_mse", "recon_sum"):
            ax.set_yscale("symlog", linthresh = 1e-4)
        if title:
            ax.set_title(title)
        ax.legend()
        fig.savefig(path, format = "svg", bbox_inches = "tight", metadata = { "Date" : None })
    except OSError as e:
        raise InvertIOError("could not write SVG (%s)" % e, path)
    finally:
        plt.close(fig)
    return path
