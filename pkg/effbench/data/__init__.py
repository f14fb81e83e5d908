from .dataset import BatchIterator, Dataset, Stats, normalize
from .formats import FORMATS, load_dataset, read_array, save_dataset, write_array
from .synthetic import synthesize_dataset
