"""Turn the raw public CSV files into the layout the repo's schemas expect.

    python3 scripts/prepare_datasets.py aids3 Aids2.csv data/aids3.csv
    python3 scripts/prepare_datasets.py colon colon.csv data/colon.csv

support2.csv needs no preparation: the schema selects its columns by name,
so the raw download can be placed at data/support2.csv as-is.

aids3: the Australian AIDS survival table ships diagnosis and end dates as
Julian day numbers; this adds a `time` column (death - diag, days).  colon:
the trial file has two rows per patient (recurrence and death); this keeps
the death rows (etype == 2).  All original columns pass through untouched;
the schemas simply ignore the ones they do not declare.
"""

import argparse
import csv
import sys


def _rows(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        yield [h.strip().strip('"') for h in header]
        for row in reader:
            if row:
                yield row


def prepare_aids3(src, dst):
    rows = _rows(src)
    header = next(rows)
    diag, death = header.index("diag"), header.index("death")
    count = 0
    with open(dst, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + ["time"])
        for row in rows:
            writer.writerow(row + [str(int(row[death]) - int(row[diag]))])
            count += 1
    return count


def prepare_colon(src, dst):
    rows = _rows(src)
    header = next(rows)
    etype = header.index("etype")
    count = 0
    with open(dst, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            if row[etype].strip() == "2":
                writer.writerow(row)
                count += 1
    return count


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("dataset", choices=("aids3", "colon"))
    parser.add_argument("src", help="raw downloaded CSV")
    parser.add_argument("dst", help="prepared CSV path, e.g. data/aids3.csv")
    args = parser.parse_args(argv)
    count = {"aids3": prepare_aids3, "colon": prepare_colon}[args.dataset](args.src, args.dst)
    print(f"{args.dst}: {count} rows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
