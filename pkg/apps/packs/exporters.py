from apps.core.exporters import read_numeric_csv, write_csv


def write_population_curves(path, report):
    """P against beta, one column per requested pack count (plot-ready)"""
    counts = sorted({c.seeded_n for c in report.candidates})
    betas = sorted({c.beta for c in report.candidates})
    lookup = {(c.seeded_n, c.beta): c.population for c in report.candidates}
    rows = []
    for beta in betas:
        values = [lookup.get((n, beta)) for n in counts]
        rows.append([beta] + ['' if v is None else v for v in values])
    return write_csv(path, ['beta'] + [f'P_N{n}' for n in counts], rows)


def read_population_curves(path):
    return read_numeric_csv(path)
