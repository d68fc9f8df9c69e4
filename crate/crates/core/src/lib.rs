pub mod cssl;
pub mod datagen;
pub mod experiment;
pub mod infobounds;
pub mod losses;
pub mod nn;
pub mod seeding;
