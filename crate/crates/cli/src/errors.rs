use std::fmt;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const CHECK_FAILED: u8 = 3;

/// Bad flags, missing required settings, or a refused overwrite.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A self-check (gradcheck) ran to completion and reported failure.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return USAGE;
        }
        if cause.is::<CheckFailed>() {
            return CHECK_FAILED;
        }
        if let Some(e) = cause.downcast_ref::<alwnn::Error>() {
            return match e {
                alwnn::Error::Config(_) => USAGE,
                _ => DATA,
            };
        }
    }
    DATA
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_innermost_known_cause() {
        assert_eq!(exit_code(&usage("x")), USAGE);
        assert_eq!(exit_code(&CheckFailed("x".into()).into()), CHECK_FAILED);
        let e: anyhow::Error = alwnn::Error::Format("bad".into()).into();
        assert_eq!(exit_code(&e.context("loading")), DATA);
        let e = Err::<(), _>(alwnn::Error::Config("bad".into())).context("reading config").unwrap_err();
        assert_eq!(exit_code(&e), USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), DATA);
    }
}
