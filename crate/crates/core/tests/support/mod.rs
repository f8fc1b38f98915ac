pub mod grad_suite;
