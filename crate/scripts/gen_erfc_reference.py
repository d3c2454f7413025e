"""Writes the erfc reference table used by the accuracy tests.

Values are computed with mpmath at 50 significant digits on the exact
binary64 value of each abscissa x = k/10, k = -100..99.
"""
import sys
import mpmath

mpmath.mp.dps = 50

def main(path):
    with open(path, "w") as out:
        out.write("x,erfc\n")
        for k in range(-100, 100):
            x = float(k) / 10.0
            value = mpmath.erfc(mpmath.mpf(x))
            out.write(f"{x!r},{mpmath.nstr(value, 30)}\n")

if __name__ == "__main__":
    main(sys.argv[1])
