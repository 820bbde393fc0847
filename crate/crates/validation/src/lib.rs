//! Holds the `acceptance` test target. It lives in its own package, so a
//! failing criterion cannot stop the other suites of a workspace test run.
