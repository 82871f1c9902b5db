from transformers import TrainerCallback

# uses special color characters for the console output
# printf "\e[30;1mTesting color\e[0m"


class ShowCombinationVariances(TrainerCallback):
    """Draws on the console, at the end of every epoch, a bar per modality combination proportional to its variance d_j.
    Combinations selected in the hard set are colored red, the others blue.

    Args:

        width (int): number of characters of the longest bar.
    """

    COLOR_CHAR = {
            "blue": '\033[34;1m',
            "red": '\033[31;1m',
            "close": '\033[0m'
        }

    def __init__(self, width: int = 40, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.width = width

    def on_epoch_end(self, args, state, control, epoch_record=None, **kwargs):
        if not epoch_record or not epoch_record["variances"]:
            return
        print(self.render(epoch_record))

    def render(self, epoch_record) -> str:
        rows = epoch_record["variances"]
        largest = max(row["d_j"] for row in rows)
        lines = [f"\nepoch {epoch_record['epoch']}  mean sigma^2 = {epoch_record['mean_sigma2']:.4f}"]
        for row in rows:
            n = round(self.width * row["d_j"] / largest) if largest > 0 else 0
            # •◦ marks present and missing modalities
            marks = "".join("•" if b == "1" else "◦" for b in row["bits"])
            color = "red" if row["in_hard_set"] else "blue"
            bar = f"{self.COLOR_CHAR[color]}{'█' * n}{self.COLOR_CHAR['close']}"
            lines.append(f"{row['index']:>3} {marks} {bar} {row['d_j']:.4f}")
        return "\n".join(lines)
