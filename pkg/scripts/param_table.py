"""Print matrix vs vector parameter counts for a few layer and seq2seq sizes."""

from matnet.layers import parameter_count
from matnet.recurrent import matrix_seq2seq_parameter_count, vector_seq2seq_parameter_count

LAYERS = [(28, 28, 50, 50), (28, 28, 20, 20), (64, 64, 200, 200), (64, 32, 16, 16)]
SEQ2SEQ = [((64, 64), (200, 200), 2000), ((16, 16), (10, 10), 100)]


def main():
    print(f"{'layer':>20}  {'matrix':>10}  {'vector':>14}  ratio")
    for dims in LAYERS:
        c = parameter_count(*dims)
        print(f"{'x'.join(map(str, dims)):>20}  {c.matrix_count:>10,}  {c.vector_count:>14,}  "
              f"{c.vector_count / c.matrix_count:.0f}")
    print()
    print(f"{'seq2seq':>20}  {'cell':>5}  {'matrix':>10}  {'vector':>14}")
    for frame, hidden, units in SEQ2SEQ:
        for cell in ("rnn", "lstm", "gru"):
            m = matrix_seq2seq_parameter_count(frame, hidden, cell)
            v = vector_seq2seq_parameter_count(frame[0] * frame[1], units, cell)
            label = f"{frame[0]}x{frame[1]}/{hidden[0]}x{hidden[1]}"
            print(f"{label:>20}  {cell:>5}  {m:>10,}  {v:>14,}")


if __name__ == "__main__":
    main()
