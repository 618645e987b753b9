//! Date helpers. Every analysis series in the pipeline runs on weekdays only.

use chrono::{DateTime, Datelike, Duration, NaiveDate, Weekday};

pub const SECONDS_PER_DAY: i64 = 86_400;

pub fn is_weekday(date: NaiveDate) -> bool {
    !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Calendar date of `ts` (epoch seconds) after shifting by a fixed UTC offset.
pub fn local_date(ts: i64, utc_offset_s: i32) -> NaiveDate {
    let shifted = ts + i64::from(utc_offset_s);
    DateTime::from_timestamp(shifted.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY, 0)
        .expect("timestamp within chrono range")
        .date_naive()
}

/// Seconds since local midnight.
pub fn local_second_of_day(ts: i64, utc_offset_s: i32) -> i64 {
    (ts + i64::from(utc_offset_s)).rem_euclid(SECONDS_PER_DAY)
}

/// Epoch seconds of UTC midnight starting `date`.
pub fn midnight_ts(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp()
}

/// All weekdays in `[start, end]`.
pub fn weekdays_between(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut day = start;
    while day <= end {
        if is_weekday(day) {
            out.push(day);
        }
        day += Duration::days(1);
    }
    out
}

/// Weekdays of February 1–14 of `year`, used for trip-rate calibration.
pub fn calibration_window(year: i32) -> Vec<NaiveDate> {
    weekdays_between(ymd(year, 2, 1), ymd(year, 2, 14))
}

/// Default benchmark days: weekdays of February 3–14 of `year`.
pub fn default_benchmark_dates(year: i32) -> Vec<NaiveDate> {
    weekdays_between(ymd(year, 2, 3), ymd(year, 2, 14))
}

pub fn ymd(year: i32, month: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, month, day).expect("valid calendar date")
}
