import math
import sys

print(math.prod(int(tok) for tok in sys.stdin.read().split()))
